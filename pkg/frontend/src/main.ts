/** DOM wiring for the ROI explorer: pick a run, draw feature/reference ROIs,
 * run the hypothesis test, and slide the threshold with instant local
 * recomputation.  At most one test request is in flight; stale responses are
 * discarded by token. */

import { ApiClient, RoiTestResponse, RunSummary } from "./api.js";
import { Tensor } from "./binv.js";
import { encodeRle } from "./rle.js";
import { Shape, UndoStack, ViewerState, canRunTest, commitRoi, initialState } from "./state.js";
import { recomputeTails, renderHistogram, renderImage } from "./viewer.js";

const api = new ApiClient(
  new URLSearchParams(location.search).get("api") ?? "http://127.0.0.1:8008",
);

const el = <T extends HTMLElement>(id: string): T =>
  document.getElementById(id) as T;

let state: ViewerState = initialState();
const undoStack = new UndoStack();
let tensor: Tensor | null = null;
let requestToken = 0;
let drawing: Array<[number, number]> = [];

function imageSize(): [number, number] {
  if (!tensor) return [0, 0];
  const [h, w] = tensor.shape.slice(-2);
  return [h, w];
}

function setStatus(text: string, isError = false): void {
  const bar = el<HTMLDivElement>("status");
  bar.textContent = text;
  bar.className = isError ? "error" : "";
}

function redraw(): void {
  if (tensor) {
    renderImage(
      el<HTMLCanvasElement>("slice"),
      tensor,
      state.windowHu[0],
      state.windowHu[1],
      state.feature,
      state.reference,
    );
  }
  const res = state.lastResult?.results;
  renderHistogram(el<HTMLCanvasElement>("hist"), res?.sampling, res?.direct, state.tau);
  const tails = recomputeTails(res?.sampling, res?.direct, state.tau);
  el<HTMLSpanElement>("p-sampling").textContent =
    tails.samplingP === null ? "-" : tails.samplingP.toFixed(4);
  el<HTMLSpanElement>("p-direct").textContent =
    tails.directP === null ? "-" : tails.directP.toFixed(4);
  el<HTMLSpanElement>("tau-readout").textContent = `${state.tau.toFixed(1)} HU`;
  if (state.warning) setStatus(state.warning, true);
}

async function refreshImage(): Promise<void> {
  if (!state.runId) return;
  try {
    tensor = await api.fetchRawImage(state.runId, state.imageKind);
    const [h, w] = imageSize();
    const canvas = el<HTMLCanvasElement>("slice");
    canvas.width = w * 12;
    canvas.height = h * 12;
    setStatus(`loaded ${state.imageKind} (${h}x${w})`);
    redraw();
  } catch (err) {
    setStatus(String(err), true);
  }
}

async function loadRuns(): Promise<void> {
  try {
    const runs = await api.listRuns();
    const select = el<HTMLSelectElement>("run-select");
    select.innerHTML = "";
    runs
      .filter((r: RunSummary) => r.available_images.length > 0)
      .forEach((r) => {
        const opt = document.createElement("option");
        opt.value = r.run_id;
        opt.textContent = `${r.run_id} (${r.kind}, ${r.n_cached_samples} samples)`;
        select.appendChild(opt);
      });
    if (select.options.length > 0) {
      state.runId = select.value;
      await refreshImage();
    } else {
      setStatus("no runs with cached images found", true);
    }
  } catch (err) {
    setStatus(String(err), true);
  }
}

function canvasToPixel(event: MouseEvent): [number, number] {
  const canvas = el<HTMLCanvasElement>("slice");
  const rect = canvas.getBoundingClientRect();
  const [h, w] = imageSize();
  const j = ((event.clientX - rect.left) / rect.width) * w;
  const i = ((event.clientY - rect.top) / rect.height) * h;
  return [i, j];
}

function activeLabel(): "feature" | "reference" {
  return el<HTMLSelectElement>("roi-label").value as "feature" | "reference";
}

function commitShape(shape: Shape): void {
  const [h, w] = imageSize();
  if (h === 0) return;
  undoStack.push(state);
  const outcome = commitRoi(state, shape, activeLabel(), h, w);
  if (!outcome.committed) undoStack.undo(state); // drop the useless frame
  state = outcome.state;
  redraw();
}

function wireEvents(): void {
  el<HTMLSelectElement>("run-select").addEventListener("change", async (e) => {
    state = { ...initialState(), runId: (e.target as HTMLSelectElement).value };
    await refreshImage();
  });
  el<HTMLSelectElement>("image-kind").addEventListener("change", async (e) => {
    state = { ...state, imageKind: (e.target as HTMLSelectElement).value };
    await refreshImage();
  });
  const applyWindow = () => {
    const lo = parseFloat(el<HTMLInputElement>("win-lo").value);
    const hi = parseFloat(el<HTMLInputElement>("win-hi").value);
    if (Number.isFinite(lo) && Number.isFinite(hi) && hi > lo) {
      state = { ...state, windowHu: [lo, hi] };
      redraw(); // client-side mapping; no refetch
    }
  };
  el<HTMLInputElement>("win-lo").addEventListener("change", applyWindow);
  el<HTMLInputElement>("win-hi").addEventListener("change", applyWindow);

  const slice = el<HTMLCanvasElement>("slice");
  slice.addEventListener("click", (event) => {
    const mode = el<HTMLSelectElement>("draw-mode").value;
    const [i, j] = canvasToPixel(event);
    if (mode === "circle") {
      const r = parseFloat(el<HTMLInputElement>("circle-radius").value) || 3;
      commitShape({ kind: "circle", circle: [i, j, r] });
    } else {
      drawing.push([i, j]);
      setStatus(`polygon: ${drawing.length} vertices (double-click to close)`);
    }
  });
  slice.addEventListener("dblclick", () => {
    if (el<HTMLSelectElement>("draw-mode").value === "polygon" && drawing.length >= 3) {
      commitShape({ kind: "polygon", points: drawing });
    }
    drawing = [];
  });

  el<HTMLButtonElement>("undo").addEventListener("click", () => {
    state = undoStack.undo(state);
    redraw();
  });
  el<HTMLButtonElement>("clear").addEventListener("click", () => {
    undoStack.push(state);
    state = { ...state, feature: null, reference: null, lastResult: null, warning: null };
    redraw();
  });

  el<HTMLInputElement>("tau").addEventListener("input", (e) => {
    state = { ...state, tau: parseFloat((e.target as HTMLInputElement).value) };
    redraw(); // local tail recomputation only
  });

  el<HTMLButtonElement>("run-test").addEventListener("click", async () => {
    if (!canRunTest(state)) {
      setStatus("commit both a feature and a reference ROI first", true);
      return;
    }
    const token = ++requestToken;
    setStatus("running test...");
    try {
      const response: RoiTestResponse = await api.roiTest(
        state.runId!,
        encodeRle(state.feature!),
        encodeRle(state.reference!),
        state.tau,
        "both",
      );
      if (token !== requestToken) return; // stale
      state = { ...state, lastResult: response, warning: null };
      setStatus("test complete");
      redraw();
    } catch (err) {
      if (token !== requestToken) return;
      setStatus(`${err} (retry available)`, true);
    }
  });
}

wireEvents();
void loadRuns();
