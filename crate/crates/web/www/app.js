import init, { simulate, reachability_table, priority_curve } from "./pkg/omega_sim_web.js";

const examples = {
  "all-on to all-off": `SPACE
  c[3] = bool
LEGAL
  allow = (0,0,0)
  allow = (1,1,1)
PLANT
  start = (1,1,1)
STORAGE
  pattern = 0 values (1,1,1)
  pattern = 1 values (0,0,0)
RUN
  theta = 1
  start = (1,1,1)
  goal = (0,0,0)
  budgets = 3 2
`,
  "iterative switch": `SPACE
  s[4] = bool
PLANT
  kind = table
  successors = 0 1 2 3 4 5 6 7 8 9 10 11 12 13 14 15
  start = pattern 0
STORAGE
  pattern = 0 values (0,0,0,0)
  pattern = 1 values (1,1,1,1)
CHANNELS
  n = 3
  m = 3
CONTROLLER
  strategies = iterative
  iterations = 4
ENVIRONMENT
  event = 0
    demand = 1
RUN
  ticks = 30
`,
};

const $ = (id) => document.getElementById(id);

function show(el, text, failed = false) {
  el.textContent = text;
  el.classList.toggle("error", failed);
}

function attempt(el, f) {
  try {
    f();
  } catch (e) {
    show(el, String(e.message ?? e), true);
  }
}

function runScenario() {
  attempt($("run-out"), () => {
    const out = JSON.parse(simulate($("scenario").value, BigInt($("seed").value || 0)));
    const head = out.trace_csv.split("\n").slice(0, 40).join("\n");
    show($("run-out"), JSON.stringify({ summary: out.summary, reconfigurations: out.reconfigurations }, null, 2) + "\n\n" + head);
  });
}

function reach() {
  const table = $("reach-out");
  table.replaceChildren();
  attempt(table, () => {
    const out = JSON.parse(reachability_table($("scenario").value, $("budgets").value, BigInt($("theta").value || 1)));
    const header = table.insertRow();
    for (const h of ["budget", "reachable", "steps", "ticks", "path"]) {
      header.appendChild(document.createElement("th")).textContent = h;
    }
    for (const r of out.rows) {
      const row = table.insertRow();
      for (const v of [r.budget, r.reachable, r.path_len ?? "-", r.wall_ticks ?? "-", r.path.join(" > ")]) {
        row.insertCell().textContent = v;
      }
    }
  });
}

function priority() {
  attempt($("priority-out"), () => {
    const out = JSON.parse(priority_curve($("segments").value, Number($("rate").value)));
    show($("priority-out"), `completion ticks: ${out.segment_completion.join(", ")}\ntotal: ${out.total_ticks}`);
    const c = $("curve");
    const g = c.getContext("2d");
    g.clearRect(0, 0, c.width, c.height);
    g.beginPath();
    g.moveTo(0, c.height);
    out.curve.forEach((y, i) => g.lineTo(((i + 1) / out.curve.length) * c.width, c.height * (1 - y)));
    g.stroke();
  });
}

await init();
for (const name of Object.keys(examples)) {
  $("example").add(new Option(name, name));
}
$("example").onchange = () => ($("scenario").value = examples[$("example").value]);
$("scenario").value = examples[Object.keys(examples)[0]];
$("run").onclick = runScenario;
$("reach").onclick = reach;
$("priority").onclick = priority;
