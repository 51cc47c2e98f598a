/** Typed client for the run service; the UI touches no files directly. */

import { parseTensor, Tensor } from "./binv.js";
import { RleMask } from "./rle.js";

export interface RunSummary {
  run_id: string;
  kind: string;
  image_size: number | null;
  n_cached_samples: number;
  available_images: string[];
}

export interface MethodResult {
  method: string;
  tau: number;
  p_value: number;
  mu_delta: number;
  sigma_delta: number;
  n_samples?: number;
  delta_samples?: number[];
  histogram?: { bin_edges: number[]; counts: number[] };
  degenerate?: boolean;
}

export interface RoiTestResponse {
  tau_hu: number;
  method: string;
  results: { sampling?: MethodResult; direct?: MethodResult };
}

export class ApiClient {
  constructor(private base: string) {}

  async listRuns(): Promise<RunSummary[]> {
    const res = await fetch(`${this.base}/runs`);
    if (!res.ok) throw new Error(`GET /runs failed: ${res.status}`);
    return res.json();
  }

  async fetchRawImage(runId: string, kind: string): Promise<Tensor> {
    const res = await fetch(
      `${this.base}/runs/${encodeURIComponent(runId)}/image?kind=${kind}&format=raw`,
    );
    if (!res.ok) throw new Error(`raw image fetch failed: ${res.status}`);
    return parseTensor(await res.arrayBuffer());
  }

  async roiTest(
    runId: string,
    feature: RleMask,
    reference: RleMask,
    tau: number,
    method: string,
  ): Promise<RoiTestResponse> {
    const res = await fetch(`${this.base}/runs/${encodeURIComponent(runId)}/roi-test`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({
        feature_mask: feature,
        reference_mask: reference,
        tau,
        method,
      }),
    });
    if (!res.ok) {
      const detail = await res.text();
      throw new Error(`roi-test failed (${res.status}): ${detail}`);
    }
    return res.json();
  }
}
