import init, { Demo } from "./pkg/lorentz_lens_web.js";

const $ = (id) => document.getElementById(id);
const num = (id) => parseFloat($(id).value);

function demo() {
  return new Demo(num("lapse"));
}

function report(f) {
  return () => {
    $("status").textContent = "";
    try {
      f();
    } catch (e) {
      $("status").textContent = String(e);
    }
  };
}

function drawTrace() {
  const pts = demo().trace(num("t0"), num("theta"), num("slope"), Math.round(num("events")));
  const c = $("disc");
  const g = c.getContext("2d");
  const r = c.width / 2 - 20;
  g.clearRect(0, 0, c.width, c.height);
  g.save();
  g.translate(c.width / 2, c.height / 2);
  g.strokeStyle = "#999";
  g.beginPath();
  g.arc(0, 0, r, 0, 2 * Math.PI);
  g.stroke();
  // Colour runs from blue to red with time.
  let tMax = 0;
  for (let i = 2; i < pts.length; i += 3) if (!isNaN(pts[i])) tMax = Math.max(tMax, pts[i]);
  let open = false;
  for (let i = 0; i < pts.length; i += 3) {
    const [x, y, t] = [pts[i], pts[i + 1], pts[i + 2]];
    if (isNaN(x)) {
      if (open) g.stroke();
      open = false;
      continue;
    }
    if (!open) {
      const h = 240 - 240 * (t / (tMax || 1));
      g.strokeStyle = `hsl(${h}, 70%, 45%)`;
      g.beginPath();
      g.moveTo(x * r, -y * r);
      open = true;
    } else {
      g.lineTo(x * r, -y * r);
    }
  }
  g.restore();
}

function runConvergence() {
  const rows = demo().convergence();
  const table = $("rows");
  table.querySelectorAll("tr:not(:first-child)").forEach((tr) => tr.remove());
  for (let i = 0; i < rows.length; i += 2) {
    const tr = table.insertRow();
    tr.insertCell().textContent = rows[i].toExponential(1);
    tr.insertCell().textContent = rows[i + 1].toExponential(3);
  }
}

function fitCone() {
  const out = demo().fit_cone(num("ct"), num("ctheta"));
  const q = out.slice(0, 4).map((v) => v.toFixed(6));
  $("coneout").textContent =
    `fitted form  [${q[0]}, ${q[1]}]\n` +
    `             [${q[2]}, ${q[3]}]\n` +
    `cone angle error vs truth  ${out[4].toExponential(2)}\n` +
    `glancing directions used   ${out[5]}`;
}

await init();
$("trace").onclick = report(drawTrace);
$("converge").onclick = report(runConvergence);
$("cone").onclick = report(fitCone);
report(drawTrace)();
