/** Viewer state and pure transitions (kept DOM-free for unit testing).
 *
 * Committed feature/reference ROIs are always disjoint: a commit that
 * overlaps the other ROI is clipped against it and flagged so the UI can
 * warn.  Undo restores the exact previous state.
 */

import { Mask, clipAgainst, maskArea, rasterizeCircle, rasterizePolygon } from "./rle.js";
import { RoiTestResponse } from "./api.js";

export type RoiLabel = "feature" | "reference";

export interface Shape {
  kind: "circle" | "polygon";
  // circle: [ci, cj, r]; polygon: vertex list
  circle?: [number, number, number];
  points?: Array<[number, number]>;
}

export interface ViewerState {
  runId: string | null;
  imageKind: string;
  windowHu: [number, number];
  tau: number;
  feature: Mask | null;
  reference: Mask | null;
  lastResult: RoiTestResponse | null;
  warning: string | null;
}

export interface CommitOutcome {
  state: ViewerState;
  committed: boolean;
  clipped: boolean;
}

const MIN_AREA_PX = 4;

export function initialState(): ViewerState {
  return {
    runId: null,
    imageKind: "fbp",
    windowHu: [-150, 200],
    tau: 10,
    feature: null,
    reference: null,
    lastResult: null,
    warning: null,
  };
}

export function rasterizeShape(shape: Shape, height: number, width: number): Mask {
  if (shape.kind === "circle") {
    const [ci, cj, r] = shape.circle!;
    return rasterizeCircle(height, width, ci, cj, r);
  }
  return rasterizePolygon(height, width, shape.points ?? []);
}

export function commitRoi(
  state: ViewerState,
  shape: Shape,
  label: RoiLabel,
  height: number,
  width: number,
): CommitOutcome {
  let mask = rasterizeShape(shape, height, width);
  if (maskArea(mask) < MIN_AREA_PX) {
    return {
      state: { ...state, warning: `shape area below ${MIN_AREA_PX} px, rejected` },
      committed: false,
      clipped: false,
    };
  }
  const other = label === "feature" ? state.reference : state.feature;
  let clipped = false;
  if (other !== null) {
    const res = clipAgainst(mask, other);
    mask = res.mask;
    clipped = res.clipped;
    if (maskArea(mask) < MIN_AREA_PX) {
      return {
        state: { ...state, warning: "shape fully inside the other ROI, rejected" },
        committed: false,
        clipped: true,
      };
    }
  }
  const next: ViewerState = {
    ...state,
    [label]: mask,
    warning: clipped ? "overlap with the other ROI was clipped" : null,
    lastResult: null,
  } as ViewerState;
  return { state: next, committed: true, clipped };
}

export class UndoStack {
  private stack: ViewerState[] = [];

  push(state: ViewerState): void {
    this.stack.push(state);
  }

  undo(current: ViewerState): ViewerState {
    return this.stack.pop() ?? current;
  }

  get depth(): number {
    return this.stack.length;
  }
}

export function canRunTest(state: ViewerState): boolean {
  return state.runId !== null && state.feature !== null && state.reference !== null;
}
