import init, { Demo } from "./pkg/conretrieve_web.js";

const $ = (id) => document.getElementById(id);
let demo;

function escape(s) {
  return s.replace(/[&<>"]/g, (c) => ({ "&": "&amp;", "<": "&lt;", ">": "&gt;", '"': "&quot;" })[c]);
}

function guarded(fn) {
  return () => {
    try {
      fn();
    } catch (e) {
      $("status").textContent = `error: ${e.message ?? e}`;
    }
  };
}

function showHits() {
  const hits = JSON.parse(demo.retrieve($("conv").value, Number($("k").value)));
  $("hits").innerHTML = hits
    .map(
      (h) => `<div class="hit"><b>${h.score.toFixed(4)}</b> ${escape(h.id)}<br>
        <i>${escape(h.summary)}</i><br>state: <code>${escape(h.state)}</code>
        <pre>${escape(h.transcript)}</pre></div>`,
    )
    .join("");
}

function showWeights() {
  const report = JSON.parse(demo.inspect($("conv").value));
  $("weights").innerHTML = report.tokens
    .map((t) => {
      const alpha = Math.max(t.weight, 0.04).toFixed(3);
      const cls = t.latest ? "tok latest" : "tok";
      return `<span class="${cls}" style="background: rgba(30,110,220,${alpha})"
        title="${t.weight.toFixed(4)}">${escape(t.token)}</span>`;
    })
    .join("");
}

function showSimilarity() {
  const r = JSON.parse(demo.similarity($("conv").value, $("summary").value));
  const rows = r.alignment
    .map((a) => `<tr><td>${escape(a.token)}</td><td>${a.weight.toFixed(3)}</td><td>→ ${escape(a.match)}</td></tr>`)
    .join("");
  $("sim").innerHTML = `<p>score <b>${r.score.toFixed(4)}</b></p><table>${rows}</table>`;
}

await init();
setTimeout(() => {
  const started = performance.now();
  demo = new Demo(8, 12, 1n);
  const info = JSON.parse(demo.summary());
  const last = info.epochs.at(-1);
  $("status").textContent =
    `Trained ${info.epochs.length} epochs in ${((performance.now() - started) / 1000).toFixed(1)} s ` +
    `(loss ${last.loss.toFixed(3)}, in-batch accuracy ${last.accuracy.toFixed(2)}); ` +
    `${info.entries} indexed turns, ${info.vocabulary} vocabulary entries.`;
  for (const [id, fn] of [["retrieve", showHits], ["inspect", showWeights], ["similarity", showSimilarity]]) {
    $(id).disabled = false;
    $(id).addEventListener("click", guarded(fn));
  }
}, 0);
