// Full-loop test against the real generation service: builds a tiny corpus
// and checkpoint once (cached), starts the server, and drives it through the
// UI's own client and state machinery.

import { spawn, spawnSync } from "node:child_process";
import { existsSync, mkdirSync } from "node:fs";
import path from "node:path";
import { afterAll, beforeAll, describe, expect, it } from "vitest";

import { ForgeClient } from "../src/api";
import { parseObj, vertexFingerprint } from "../src/objparse";
import { EditorState } from "../src/state";

const CACHE = path.resolve(__dirname, ".cache");
const DATASET = path.join(CACHE, "ds");
const CKPT = path.join(CACHE, "structure.ckpt");
const PORT = 8931;
const BASE = `http://127.0.0.1:${PORT}`;

let server: ReturnType<typeof spawn> | null = null;

function forge(args: string[]): void {
  const run = spawnSync("python3", ["-m", "shapeforge.cli", ...args], { encoding: "utf-8" });
  if (run.status !== 0) {
    throw new Error(`forge ${args.join(" ")} failed:\n${run.stdout}\n${run.stderr}`);
  }
}

beforeAll(async () => {
  mkdirSync(CACHE, { recursive: true });
  if (!existsSync(CKPT)) {
    forge(["corpus", "build", "--out", DATASET, "--n", "10", "--seed", "0"]);
    forge([
      "train", "structure",
      "--dataset", DATASET,
      "--out", CKPT,
      "--iters", "30",
      "--batch", "8",
      "--seed", "0",
    ]);
  }
  server = spawn(
    "python3",
    ["-m", "shapeforge.cli", "serve", "--checkpoint", CKPT, "--port", String(PORT)],
    { stdio: ["ignore", "pipe", "pipe"] },
  );
  const client = new ForgeClient(BASE, undefined, 50);
  const deadline = Date.now() + 30_000;
  for (;;) {
    try {
      await client.health();
      break;
    } catch {
      if (Date.now() > deadline) throw new Error("service did not come up");
      await new Promise((r) => setTimeout(r, 250));
    }
  }
}, 180_000);

afterAll(() => {
  server?.kill();
});

describe("UI loop against the live service", () => {
  const client = () => new ForgeClient(BASE, undefined, 50);

  it("checkpoint info drives the tau0 slider bounds", async () => {
    const info = await client().checkpoint();
    expect(info.tau0_max).toBe(25);
    const state = new EditorState();
    state.tau0Max = info.tau0_max;
    expect(state.setTau0(999)).toBe(25);
  });

  it("chair template at tau0 = T displays the round-trip control", async () => {
    const api = client();
    const state = new EditorState();
    state.loadTemplate("chair");
    state.tau0Max = (await api.checkpoint()).tau0_max;
    state.setTau0(state.tau0Max);

    const jobId = await api.submitGenerate({
      scene: state.sceneForRequest(),
      tau0: state.tau0,
      label: "chair",
      seed: 0,
    });
    state.activeJobId = jobId;
    const progress: number[] = [];
    const job = await api.waitForJob(jobId, { onProgress: (done) => progress.push(done) });
    expect(job?.status).toBe("done");
    expect(state.applyResult(jobId, job!.result!)).toBe(true);

    // zero-step contract: the service reports a perfect round-trip IoU and the
    // displayed mesh is exactly the returned control round-trip
    expect(job!.result!.metrics.iou_roundtrip).toBe(1.0);
    const mesh = parseObj(state.lastResult!.mesh_obj);
    expect(mesh.indices.length % 3).toBe(0);
    expect(mesh.positions.length).toBeGreaterThan(0);
    // progress is monotone and ends complete
    for (let i = 1; i < progress.length; i++) expect(progress[i]).toBeGreaterThanOrEqual(progress[i - 1]);
    expect(job!.progress.done).toBe(job!.progress.total);
  }, 120_000);

  it("same seed twice shows identical mesh and identical displayed CD", async () => {
    const api = client();
    const state = new EditorState();
    state.loadTemplate("chair");
    state.setTau0(12);
    const run = async () => {
      const jobId = await api.submitGenerate({
        scene: state.sceneForRequest(),
        tau0: state.tau0,
        label: "chair",
        seed: 7,
      });
      const job = await api.waitForJob(jobId);
      expect(job?.status).toBe("done");
      return job!.result!;
    };
    const [a, b] = [await run(), await run()];
    expect(a.mesh_obj).toBe(b.mesh_obj);
    expect(a.metrics.cd_e3).toBe(b.metrics.cd_e3);
    expect(vertexFingerprint(parseObj(a.mesh_obj))).toBe(vertexFingerprint(parseObj(b.mesh_obj)));
    expect(a.structure_b64).toBe(b.structure_b64);
  }, 120_000);

  it("scene export/import round-trips through the UI", async () => {
    const state = new EditorState();
    state.loadTemplate("rocket");
    const exported = state.exportScene();
    const imported = new EditorState();
    imported.importScene(exported);
    expect(imported.exportScene()).toBe(exported);
    // and the imported scene is accepted by the service
    const api = client();
    const jobId = await api.submitGenerate({
      scene: imported.sceneForRequest(),
      tau0: 25,
      label: "rocket",
      seed: 0,
    });
    const job = await api.waitForJob(jobId);
    expect(job?.status).toBe("done");
  }, 120_000);

  it("invalid tau0 is rejected with a field-level message", async () => {
    const state = new EditorState();
    state.loadTemplate("table");
    await expect(
      client().submitGenerate({ scene: state.sceneForRequest(), tau0: 999, label: "table", seed: 0 }),
    ).rejects.toMatchObject({ status: 400 });
  });
});
