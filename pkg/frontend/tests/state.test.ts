import { describe, expect, it } from "vitest";

import {
  EditorState,
  EXPONENT_MAX,
  LABELS,
  PARAM_SPECS,
  canonicalJson,
  chairTemplate,
  rocketTemplate,
  tableTemplate,
} from "../src/state";

describe("templates", () => {
  it("chair has six primitives", () => {
    expect(chairTemplate().primitives).toHaveLength(6);
  });

  it("table has five primitives", () => {
    expect(tableTemplate().primitives).toHaveLength(5);
  });

  it("rocket has six primitives", () => {
    expect(rocketTemplate().primitives).toHaveLength(6);
  });

  it("templates carry local labels and category global label", () => {
    const chair = chairTemplate();
    expect(chair.global_label).toBe(LABELS.chair);
    for (const p of chair.primitives) expect(p.local_label).toBeDefined();
  });
});

describe("EditorState editing", () => {
  it("add increments the primitive count and selects it", () => {
    const state = new EditorState();
    state.loadTemplate("chair");
    const before = state.scene.primitives.length;
    const idx = state.addPrimitive();
    expect(state.scene.primitives).toHaveLength(before + 1);
    expect(state.selected).toBe(idx);
  });

  it("delete decrements and clears the selection", () => {
    const state = new EditorState();
    state.loadTemplate("table");
    state.selected = 2;
    state.deleteSelected();
    expect(state.scene.primitives).toHaveLength(4);
    expect(state.selected).toBeNull();
  });

  it("sliders cover eleven parameters", () => {
    expect(PARAM_SPECS).toHaveLength(11);
  });

  it("out-of-range values are clamped", () => {
    const state = new EditorState();
    state.loadTemplate("chair");
    const stored = state.setParam(0, "exponents", 0, 99);
    expect(stored).toBe(EXPONENT_MAX);
    expect(state.scene.primitives[0].exponents[0]).toBe(EXPONENT_MAX);
    expect(state.setParam(0, "scale", 1, -5)).toBeGreaterThan(0);
  });

  it("tau0 stays within the checkpoint bounds", () => {
    const state = new EditorState();
    state.tau0Max = 25;
    expect(state.setTau0(99)).toBe(25);
    expect(state.setTau0(-3)).toBe(0);
    expect(state.setTau0(12.6)).toBe(13);
  });

  it("local label assignment per primitive", () => {
    const state = new EditorState();
    state.loadTemplate("chair");
    state.setLocalLabel(0, LABELS.red);
    expect(state.scene.primitives[0].local_label).toBe(LABELS.red);
    state.setLocalLabel(0, undefined);
    expect(state.scene.primitives[0].local_label).toBeUndefined();
  });

  it("request scene fills missing local labels with the global label", () => {
    const state = new EditorState();
    state.loadTemplate("chair");
    for (let i = 0; i < state.scene.primitives.length; i++) state.setLocalLabel(i, undefined);
    state.setLocalLabel(0, LABELS.red);
    const doc = state.sceneForRequest();
    expect(doc.primitives[0].local_label).toBe(LABELS.red);
    for (const p of doc.primitives.slice(1)) expect(p.local_label).toBe(state.scene.global_label);
  });
});

describe("scene serialization", () => {
  it("export/import round-trips byte-identically after canonicalization", () => {
    const state = new EditorState();
    state.loadTemplate("rocket");
    state.setParam(0, "scale", 0, 0.123);
    const exported = state.exportScene();

    const fresh = new EditorState();
    fresh.importScene(exported);
    expect(fresh.exportScene()).toBe(exported);
  });

  it("import survives shuffled key order", () => {
    const state = new EditorState();
    state.loadTemplate("chair");
    const exported = state.exportScene();
    const shuffled = JSON.stringify(JSON.parse(exported)); // insertion order differs
    const fresh = new EditorState();
    fresh.importScene(shuffled);
    expect(fresh.exportScene()).toBe(exported);
  });

  it("canonical json sorts keys recursively", () => {
    expect(canonicalJson({ b: 1, a: { d: 2, c: 3 } })).toBe('{"a":{"c":3,"d":2},"b":1}');
  });

  it("rejects scenes without primitives array", () => {
    const state = new EditorState();
    expect(() => state.importScene('{"version":1}')).toThrow();
  });
});

describe("result application", () => {
  const fakeResult = {
    structure_b64: "",
    mesh_obj: "v 0 0 0\nf 1 1 1\n",
    metrics: { cd_e3: 1.5, iou_roundtrip: 1.0 },
    config: {},
    voxel_count: 1,
  };

  it("accepts the active job", () => {
    const state = new EditorState();
    state.activeJobId = "abc";
    expect(state.applyResult("abc", fakeResult)).toBe(true);
    expect(state.lastResult).toBe(fakeResult);
  });

  it("drops stale jobs", () => {
    const state = new EditorState();
    state.activeJobId = "new-job";
    expect(state.applyResult("old-job", fakeResult)).toBe(false);
    expect(state.lastResult).toBeNull();
  });
});
