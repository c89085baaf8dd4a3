// DOM wiring: template buttons, per-parameter sliders, the control-strength
// dial, generation submit + polling, and the metrics readout.

import { ForgeClient } from "./api";
import { parseObj } from "./objparse";
import { EditorState, LABELS, PARAM_SPECS, TEMPLATES } from "./state";
import { Viewer } from "./viewer";

const state = new EditorState();
const client = new ForgeClient("");
const canvas = document.getElementById("view") as HTMLCanvasElement;
const viewer = new Viewer(canvas);

const el = <T extends HTMLElement>(id: string): T => document.getElementById(id) as T;
const statusLine = el<HTMLDivElement>("status");
const metricsLine = el<HTMLDivElement>("metrics");
const progressBar = el<HTMLProgressElement>("progress");
const primList = el<HTMLSelectElement>("prim-list");
const sliderBox = el<HTMLDivElement>("sliders");
const tau0Slider = el<HTMLInputElement>("tau0");
const tau0Value = el<HTMLSpanElement>("tau0-value");
const labelSelect = el<HTMLSelectElement>("label");
const localSelect = el<HTMLSelectElement>("local-label");
const seedInput = el<HTMLInputElement>("seed");

function redraw(): void {
  viewer.setSelection(state.selected);
  viewer.showScene(state.scene, state.toggles);
  viewer.render();
}

function refreshPrimList(): void {
  primList.innerHTML = "";
  state.scene.primitives.forEach((_, i) => {
    const opt = document.createElement("option");
    opt.value = String(i);
    opt.textContent = `primitive ${i}`;
    primList.appendChild(opt);
  });
  if (state.selected !== null) primList.value = String(state.selected);
  refreshSliders();
}

function refreshSliders(): void {
  sliderBox.innerHTML = "";
  const idx = state.selected;
  if (idx === null) return;
  const prim = state.scene.primitives[idx];
  for (const spec of PARAM_SPECS) {
    const row = document.createElement("label");
    row.className = "slider-row";
    const input = document.createElement("input");
    input.type = "range";
    input.min = String(spec.min);
    input.max = String(spec.max);
    input.step = String(spec.step);
    input.value = String((prim[spec.group] as number[])[spec.index]);
    const caption = document.createElement("span");
    caption.textContent = `${spec.key} = ${Number(input.value).toFixed(3)}`;
    input.addEventListener("input", () => {
      const stored = state.setParam(idx, spec.group, spec.index, Number(input.value));
      if (stored !== Number(input.value)) input.classList.add("clamped");
      else input.classList.remove("clamped");
      input.value = String(stored);
      caption.textContent = `${spec.key} = ${stored.toFixed(3)}`;
      redraw();
    });
    row.append(caption, input);
    sliderBox.appendChild(row);
  }
  localSelect.value = prim.local_label === undefined ? "" : String(prim.local_label);
}

function populateLabels(): void {
  for (const select of [labelSelect, localSelect]) {
    if (select === localSelect) {
      const none = document.createElement("option");
      none.value = "";
      none.textContent = "(none)";
      select.appendChild(none);
    }
    for (const [name, id] of Object.entries(LABELS)) {
      const opt = document.createElement("option");
      opt.value = String(id);
      opt.textContent = name;
      select.appendChild(opt);
    }
  }
  labelSelect.value = "0";
}

for (const name of Object.keys(TEMPLATES)) {
  el<HTMLButtonElement>(`tpl-${name}`).addEventListener("click", () => {
    state.loadTemplate(name);
    labelSelect.value = String(LABELS[name]);
    refreshPrimList();
    redraw();
    statusLine.textContent = `loaded ${name} template (${state.scene.primitives.length} primitives)`;
  });
}

el<HTMLButtonElement>("add-prim").addEventListener("click", () => {
  state.addPrimitive();
  refreshPrimList();
  redraw();
});

el<HTMLButtonElement>("del-prim").addEventListener("click", () => {
  state.deleteSelected();
  refreshPrimList();
  redraw();
});

primList.addEventListener("change", () => {
  state.selected = primList.value === "" ? null : Number(primList.value);
  refreshSliders();
  redraw();
});

localSelect.addEventListener("change", () => {
  if (state.selected === null) return;
  state.setLocalLabel(state.selected, localSelect.value === "" ? undefined : Number(localSelect.value));
});

tau0Slider.addEventListener("input", () => {
  state.setTau0(Number(tau0Slider.value));
  tau0Value.textContent = String(state.tau0);
});

for (const key of ["primitives", "mesh", "overlay"] as const) {
  el<HTMLInputElement>(`toggle-${key}`).addEventListener("change", (ev) => {
    state.toggles[key] = (ev.target as HTMLInputElement).checked;
    if (state.lastResult) viewer.showGenerated(parseObj(state.lastResult.mesh_obj), state.toggles);
    redraw();
  });
}

el<HTMLButtonElement>("export-scene").addEventListener("click", () => {
  const blob = new Blob([state.exportScene()], { type: "application/json" });
  const a = document.createElement("a");
  a.href = URL.createObjectURL(blob);
  a.download = "scene.json";
  a.click();
});

el<HTMLInputElement>("import-scene").addEventListener("change", async (ev) => {
  const file = (ev.target as HTMLInputElement).files?.[0];
  if (!file) return;
  try {
    state.importScene(await file.text());
    refreshPrimList();
    redraw();
    statusLine.textContent = `imported ${state.scene.primitives.length} primitives`;
  } catch (err) {
    statusLine.textContent = `import failed: ${err}`;
  }
});

async function generate(): Promise<void> {
  const button = el<HTMLButtonElement>("generate");
  button.disabled = true;
  statusLine.textContent = "submitting...";
  try {
    state.seed = Number(seedInput.value) || 0;
    const jobId = await client.submitGenerate({
      scene: state.sceneForRequest(),
      tau0: state.tau0,
      label: Number(labelSelect.value),
      seed: state.seed,
      want_appearance: state.wantAppearance,
    });
    state.activeJobId = jobId;
    const job = await client.waitForJob(jobId, {
      onProgress: (done, total) => {
        progressBar.max = Math.max(total, 1);
        progressBar.value = done;
        statusLine.textContent = `running ${done}/${total}`;
      },
      isStale: () => state.activeJobId !== jobId,
    });
    if (!job) return; // superseded
    if (job.status === "error" || !job.result) {
      statusLine.textContent = `generation failed: ${job.error ?? "unknown"}`;
      return;
    }
    if (!state.applyResult(jobId, job.result)) return;
    viewer.showGenerated(parseObj(job.result.mesh_obj), state.toggles);
    redraw();
    const m = job.result.metrics;
    metricsLine.textContent =
      `CD x1e3 = ${m.cd_e3.toFixed(3)}   IoU(round-trip) = ${m.iou_roundtrip.toFixed(3)}   ` +
      `voxels = ${job.result.voxel_count}`;
    statusLine.textContent = "done";
  } catch (err) {
    statusLine.textContent = `request failed: ${err}`;
  } finally {
    button.disabled = false;
  }
}

el<HTMLButtonElement>("generate").addEventListener("click", () => void generate());
el<HTMLInputElement>("want-appearance").addEventListener("change", (ev) => {
  state.wantAppearance = (ev.target as HTMLInputElement).checked;
});

async function boot(): Promise<void> {
  populateLabels();
  try {
    const info = await client.checkpoint();
    state.tau0Max = info.tau0_max;
    tau0Slider.max = String(info.tau0_max);
    el<HTMLInputElement>("want-appearance").disabled = !info.has_appearance;
    statusLine.textContent = `connected: checkpoint ${info.checkpoint_id}, T=${info.T}`;
  } catch (err) {
    statusLine.textContent = `service unreachable: ${err}`;
  }
  state.loadTemplate("chair");
  refreshPrimList();
  redraw();
}

void boot();
