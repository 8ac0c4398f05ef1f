import init, { simulate, cardinality_curve } from "./pkg/psketch_web.js";

const status = document.getElementById("status");

function num(form, name) {
  return Number(form.elements[name].value);
}

function drawBars(canvas, topk) {
  const ctx = canvas.getContext("2d");
  const { width, height } = canvas;
  ctx.clearRect(0, 0, width, height);
  if (topk.length === 0) return;
  const max = Math.max(...topk.map((e) => Math.max(e.estimated, e.truth)));
  const pad = 30;
  const slot = (width - pad) / topk.length;
  const bar = Math.max(1, slot * 0.4);
  const y = (v) => height - 20 - (v / max) * (height - 40);
  ctx.font = "10px sans-serif";
  ctx.fillStyle = "#666";
  ctx.fillText(String(max), 2, 14);
  topk.forEach((e, i) => {
    const x = pad + i * slot;
    ctx.fillStyle = "#bbb";
    ctx.fillRect(x, y(e.truth), bar, height - 20 - y(e.truth));
    ctx.fillStyle = !e.in_true_topk ? "#e45756" : e.kicked ? "#f58518" : "#4c78a8";
    ctx.fillRect(x + bar, y(e.estimated), bar, height - 20 - y(e.estimated));
    if (topk.length <= 60) {
      ctx.fillStyle = "#666";
      ctx.fillText(String(i + 1), x, height - 6);
    }
  });
}

function drawSlots(canvas, slots) {
  const ctx = canvas.getContext("2d");
  const { width, height } = canvas;
  ctx.clearRect(0, 0, width, height);
  const cols = Math.ceil(Math.sqrt((slots.length * width) / height));
  const rows = Math.ceil(slots.length / cols);
  const cell = Math.min(width / cols, height / rows);
  const colors = ["#eee", "#9ecae9", "#f58518", "#4c78a8"];
  slots.forEach((s, i) => {
    ctx.fillStyle = colors[s];
    ctx.fillRect((i % cols) * cell, Math.floor(i / cols) * cell, Math.max(1, cell - 1), Math.max(1, cell - 1));
  });
}

function fmt(v) {
  if (v === null || v === undefined) return "n/a";
  return typeof v === "number" && !Number.isInteger(v) ? v.toFixed(4) : String(v);
}

function fillTable(table, rows, header) {
  table.innerHTML = "";
  if (header) {
    const tr = table.insertRow();
    header.forEach((h) => {
      const th = document.createElement("th");
      th.textContent = h;
      tr.appendChild(th);
    });
  }
  rows.forEach((r) => {
    const tr = table.insertRow();
    r.forEach((c, i) => {
      const cell = i === 0 ? document.createElement("th") : tr.insertCell();
      cell.textContent = fmt(c);
      if (i === 0) tr.appendChild(cell);
    });
  });
}

function runSimulation(form) {
  const json = simulate(
    num(form, "flows"),
    num(form, "packets"),
    num(form, "zipf"),
    num(form, "retrans"),
    num(form, "heavy"),
    num(form, "vote"),
    num(form, "k"),
    num(form, "prio"),
    num(form, "seed"),
    form.elements.literal.checked,
  );
  const sim = JSON.parse(json);
  drawBars(document.getElementById("bars"), sim.topk);
  drawSlots(document.getElementById("slots"), sim.slots);
  const m = sim.metrics;
  fillTable(document.getElementById("metrics"), [
    ["packets", sim.packets],
    ["distinct flows", sim.distinct_flows],
    ["top-k detection", m.topk_detection_accuracy],
    ["top-k packet recall", m.topk_packet_recall],
    ["top-k retrans recall", m.topk_retrans_recall],
    ["priority packet recall", m.priority_packet_recall],
    ["priority retrans recall", m.priority_retrans_recall],
    ["cardinality estimate", sim.cardinality_combined],
    ["cardinality error", m.cardinality_error],
    ["evictions", sim.stats.evictions],
    ["forwarded", sim.stats.forwarded],
  ]);
  fillTable(
    document.getElementById("priority"),
    sim.priority.map((p) => [p.key, p.packets, p.truth]),
    ["priority flow", "counted", "true"],
  );
}

function drawCurve(canvas, points) {
  const ctx = canvas.getContext("2d");
  const { width, height } = canvas;
  ctx.clearRect(0, 0, width, height);
  if (points.length === 0) return;
  const pad = 45;
  const values = points.flatMap((p) => [p.flows, p.sketch_path ?? 0, p.combined ?? 0]);
  const max = Math.max(...values);
  const x = (v) => pad + (v / points[points.length - 1].flows) * (width - pad - 10);
  const y = (v) => height - pad + 10 - (v / max) * (height - pad - 10);
  ctx.strokeStyle = "#ccc";
  ctx.beginPath();
  ctx.moveTo(pad, height - pad + 10);
  ctx.lineTo(width - 10, height - pad + 10);
  ctx.moveTo(pad, 0);
  ctx.lineTo(pad, height - pad + 10);
  ctx.stroke();
  ctx.fillStyle = "#666";
  ctx.font = "10px sans-serif";
  ctx.fillText(String(Math.round(max)), 2, 12);
  ctx.fillText("true distinct flows", width / 2 - 40, height - 8);

  const series = [
    ["#bbb", (p) => p.flows],
    ["#54a24b", (p) => p.sketch_path],
    ["#4c78a8", (p) => p.combined],
  ];
  for (const [color, get] of series) {
    ctx.strokeStyle = color;
    ctx.fillStyle = color;
    ctx.beginPath();
    let started = false;
    for (const p of points) {
      const v = get(p);
      if (v === null) {
        started = false;
        continue;
      }
      if (started) ctx.lineTo(x(p.flows), y(v));
      else ctx.moveTo(x(p.flows), y(v));
      started = true;
      ctx.fillRect(x(p.flows) - 2, y(v) - 2, 4, 4);
    }
    ctx.stroke();
  }
}

function runCurve(form) {
  const json = cardinality_curve(num(form, "max"), num(form, "steps"), num(form, "lc"), num(form, "seed"));
  drawCurve(document.getElementById("card"), JSON.parse(json));
}

function guarded(fn) {
  return (ev) => {
    ev.preventDefault();
    status.textContent = "running...";
    // Let the status repaint before the synchronous call blocks the page.
    setTimeout(() => {
      try {
        fn(ev.target);
        status.textContent = "";
      } catch (err) {
        status.textContent = String(err.message ?? err);
      }
    }, 10);
  };
}

await init();
const simForm = document.getElementById("sim");
const curveForm = document.getElementById("curve");
simForm.addEventListener("submit", guarded(runSimulation));
curveForm.addEventListener("submit", guarded(runCurve));
status.textContent = "";
guarded(runSimulation)({ preventDefault() {}, target: simForm });
guarded(runCurve)({ preventDefault() {}, target: curveForm });
