// Thin client over the generation service's job API with 1 Hz polling.

import type { CheckpointInfo, GenerateRequest, JobState } from "./types";

export class ApiError extends Error {
  constructor(
    readonly status: number,
    readonly body: unknown,
  ) {
    super(`service returned ${status}: ${JSON.stringify(body)}`);
  }
}

type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

const sleep = (ms: number) => new Promise((resolve) => setTimeout(resolve, ms));

export class ForgeClient {
  constructor(
    readonly base: string,
    private readonly fetchImpl: FetchLike = (...args) => fetch(...args),
    readonly pollIntervalMs = 1000,
  ) {}

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const resp = await this.fetchImpl(`${this.base}${path}`, init);
    const body = await resp.json().catch(() => null);
    if (!resp.ok) throw new ApiError(resp.status, body);
    return body as T;
  }

  health(): Promise<{ status: string; checkpoint_id: string; T: number; lambda: number }> {
    return this.request("/api/health");
  }

  checkpoint(): Promise<CheckpointInfo> {
    return this.request("/api/checkpoint");
  }

  async submitGenerate(req: GenerateRequest): Promise<string> {
    const body = await this.request<{ job_id: string }>("/api/generate", {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(req),
    });
    return body.job_id;
  }

  job(id: string): Promise<JobState> {
    return this.request(`/api/jobs/${id}`);
  }

  /**
   * Poll a job to a terminal state; onProgress fires per poll, and polling
   * stops early when isStale reports the job was superseded.
   */
  async waitForJob(
    id: string,
    opts: {
      onProgress?: (done: number, total: number) => void;
      isStale?: () => boolean;
      timeoutMs?: number;
    } = {},
  ): Promise<JobState | null> {
    const deadline = Date.now() + (opts.timeoutMs ?? 300_000);
    for (;;) {
      if (opts.isStale?.()) return null;
      const state = await this.job(id);
      opts.onProgress?.(state.progress.done, state.progress.total);
      if (state.status === "done" || state.status === "error") return state;
      if (Date.now() > deadline) throw new Error(`job ${id} timed out`);
      await sleep(this.pollIntervalMs);
    }
  }
}
