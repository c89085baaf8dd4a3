// Editor state: the scene being sculpted, parameter clamps mirrored from the
// geometry backend, template presets, and canonical scene serialization.

import type { GenerationResultBody, PrimitiveDoc, SceneDoc, Vec3 } from "./types";

export const EXPONENT_MIN = 0.05;
export const EXPONENT_MAX = 1.95;
export const SCALE_MIN = 0.005;
export const SCALE_MAX = 1.0;
export const TRANSLATION_MIN = 0.0;
export const TRANSLATION_MAX = 1.0;
export const ROTATION_MIN = -Math.PI;
export const ROTATION_MAX = Math.PI;

export const clamp = (v: number, lo: number, hi: number): number => Math.min(hi, Math.max(lo, v));

export interface ParamSpec {
  key: string;
  group: "scale" | "exponents" | "translation" | "rotation";
  index: number;
  min: number;
  max: number;
  step: number;
}

// the eleven per-primitive parameters, in slider order
export const PARAM_SPECS: ParamSpec[] = [
  ...[0, 1, 2].map((i) => ({
    key: `scale.${"xyz"[i]}`,
    group: "scale" as const,
    index: i,
    min: SCALE_MIN,
    max: SCALE_MAX,
    step: 0.005,
  })),
  ...[0, 1].map((i) => ({
    key: `exponents.${i === 0 ? "e1" : "e2"}`,
    group: "exponents" as const,
    index: i,
    min: EXPONENT_MIN,
    max: EXPONENT_MAX,
    step: 0.01,
  })),
  ...[0, 1, 2].map((i) => ({
    key: `translation.${"xyz"[i]}`,
    group: "translation" as const,
    index: i,
    min: TRANSLATION_MIN,
    max: TRANSLATION_MAX,
    step: 0.005,
  })),
  ...[0, 1, 2].map((i) => ({
    key: `rotation.${"zyx"[i]}`,
    group: "rotation" as const,
    index: i,
    min: ROTATION_MIN,
    max: ROTATION_MAX,
    step: 0.01,
  })),
];

function prim(
  scale: Vec3,
  exponents: [number, number],
  translation: Vec3,
  rotation: Vec3 = [0, 0, 0],
  localLabel?: number,
): PrimitiveDoc {
  const p: PrimitiveDoc = { scale, exponents, translation, rotation };
  if (localLabel !== undefined) p.local_label = localLabel;
  return p;
}

// label vocabulary mirrored from the corpus (categories then colors)
export const LABELS: Record<string, number> = {
  chair: 0,
  table: 1,
  rocket: 2,
  red: 3,
  green: 4,
  blue: 5,
  white: 6,
  gray: 7,
  yellow: 8,
};

// template presets: the un-jittered centers of the corpus category layouts
export function chairTemplate(): SceneDoc {
  const seatZ = 0.42;
  const seatH = 0.035;
  const legH = (seatZ - seatH - 0.05) / 2;
  const legR = 0.03;
  const d = 0.26 - legR - 0.01;
  return {
    version: 1,
    global_label: LABELS.chair,
    primitives: [
      prim([0.26, 0.26, seatH], [0.15, 0.15], [0.5, 0.5, seatZ], [0, 0, 0], LABELS.white),
      prim([legR, legR, legH], [0.2, 0.2], [0.5 - d, 0.5 - d, 0.05 + legH], [0, 0, 0], LABELS.gray),
      prim([legR, legR, legH], [0.2, 0.2], [0.5 - d, 0.5 + d, 0.05 + legH], [0, 0, 0], LABELS.gray),
      prim([legR, legR, legH], [0.2, 0.2], [0.5 + d, 0.5 - d, 0.05 + legH], [0, 0, 0], LABELS.gray),
      prim([legR, legR, legH], [0.2, 0.2], [0.5 + d, 0.5 + d, 0.05 + legH], [0, 0, 0], LABELS.gray),
      prim([0.247, 0.028, 0.16], [0.15, 0.15], [0.5, 0.5 - 0.26 + 0.028, seatZ + seatH + 0.16], [0, 0, 0], LABELS.white),
    ],
  };
}

export function tableTemplate(): SceneDoc {
  const topZ = 0.48;
  const topH = 0.03;
  const legH = (topZ - topH - 0.05) / 2;
  const legR = 0.03;
  const d = 0.31 - legR - 0.015;
  return {
    version: 1,
    global_label: LABELS.table,
    primitives: [
      prim([0.31, 0.31, topH], [0.15, 0.15], [0.5, 0.5, topZ], [0, 0, 0], LABELS.yellow),
      prim([legR, legR, legH], [0.25, 0.25], [0.5 - d, 0.5 - d, 0.05 + legH], [0, 0, 0], LABELS.gray),
      prim([legR, legR, legH], [0.25, 0.25], [0.5 - d, 0.5 + d, 0.05 + legH], [0, 0, 0], LABELS.gray),
      prim([legR, legR, legH], [0.25, 0.25], [0.5 + d, 0.5 - d, 0.05 + legH], [0, 0, 0], LABELS.gray),
      prim([legR, legR, legH], [0.25, 0.25], [0.5 + d, 0.5 + d, 0.05 + legH], [0, 0, 0], LABELS.gray),
    ],
  };
}

export function rocketTemplate(): SceneDoc {
  const bodyR = 0.1;
  const bodyH = 0.28;
  const bodyZ = 0.08 + bodyH;
  const finLen = 0.09;
  const finH = 0.08;
  const r = bodyR + finLen * 0.55;
  const fins: PrimitiveDoc[] = [-1, 0, 1, 2].map((k) => {
    const a = (k * Math.PI) / 2;
    return prim(
      [finLen, 0.014, finH],
      [0.05, 0.05],
      [0.5 + r * Math.cos(a), 0.5 + r * Math.sin(a), 0.08 + finH],
      [a, 0, 0],
      LABELS.gray,
    );
  });
  return {
    version: 1,
    global_label: LABELS.rocket,
    primitives: [
      prim([bodyR, bodyR, bodyH], [0.3, 1.0], [0.5, 0.5, bodyZ], [0, 0, 0], LABELS.red),
      prim([bodyR * 0.9, bodyR * 0.9, 0.11], [1.2, 1.0], [0.5, 0.5, bodyZ + bodyH + 0.085], [0, 0, 0], LABELS.red),
      ...fins,
    ],
  };
}

export const TEMPLATES: Record<string, () => SceneDoc> = {
  chair: chairTemplate,
  table: tableTemplate,
  rocket: rocketTemplate,
};

function clampPrimitive(p: PrimitiveDoc): PrimitiveDoc {
  return {
    ...p,
    scale: p.scale.map((v) => clamp(v, SCALE_MIN, SCALE_MAX)) as Vec3,
    exponents: [clamp(p.exponents[0], EXPONENT_MIN, EXPONENT_MAX), clamp(p.exponents[1], EXPONENT_MIN, EXPONENT_MAX)],
    translation: p.translation.map((v) => clamp(v, TRANSLATION_MIN, TRANSLATION_MAX)) as Vec3,
    rotation: p.rotation.map((v) => clamp(v, ROTATION_MIN, ROTATION_MAX)) as Vec3,
  };
}

/** Stable stringify with recursively sorted object keys. */
export function canonicalJson(value: unknown): string {
  if (Array.isArray(value)) {
    return `[${value.map(canonicalJson).join(",")}]`;
  }
  if (value !== null && typeof value === "object") {
    const entries = Object.entries(value as Record<string, unknown>)
      .filter(([, v]) => v !== undefined)
      .sort(([a], [b]) => (a < b ? -1 : a > b ? 1 : 0))
      .map(([k, v]) => `${JSON.stringify(k)}:${canonicalJson(v)}`);
    return `{${entries.join(",")}}`;
  }
  return JSON.stringify(value);
}

export interface ViewToggles {
  primitives: boolean;
  mesh: boolean;
  overlay: boolean;
}

export class EditorState {
  scene: SceneDoc = { version: 1, global_label: 0, primitives: [] };
  selected: number | null = null;
  tau0 = 6;
  tau0Max = 25;
  label: string | number = "chair";
  seed = 0;
  wantAppearance = false;
  toggles: ViewToggles = { primitives: true, mesh: true, overlay: false };
  lastResult: GenerationResultBody | null = null;
  activeJobId: string | null = null;

  loadTemplate(name: string): void {
    const make = TEMPLATES[name];
    if (!make) throw new Error(`unknown template ${name}`);
    this.scene = make();
    const cat = LABELS[name];
    if (cat !== undefined) this.label = name;
    this.selected = this.scene.primitives.length ? 0 : null;
  }

  addPrimitive(p?: PrimitiveDoc): number {
    const doc = clampPrimitive(
      p ?? { scale: [0.15, 0.15, 0.15], exponents: [1, 1], translation: [0.5, 0.5, 0.5], rotation: [0, 0, 0] },
    );
    this.scene.primitives.push(doc);
    this.selected = this.scene.primitives.length - 1;
    return this.selected;
  }

  deleteSelected(): void {
    if (this.selected === null) return;
    this.scene.primitives.splice(this.selected, 1);
    this.selected = null;
  }

  /** Slider write: clamps out-of-range values; returns the stored value. */
  setParam(primIndex: number, group: ParamSpec["group"], axis: number, value: number): number {
    const spec = PARAM_SPECS.find((s) => s.group === group && s.index === axis);
    if (!spec) throw new Error(`unknown parameter ${group}[${axis}]`);
    const prim = this.scene.primitives[primIndex];
    if (!prim) throw new Error(`no primitive ${primIndex}`);
    const clamped = clamp(value, spec.min, spec.max);
    (prim[group] as number[])[axis] = clamped;
    return clamped;
  }

  setLocalLabel(primIndex: number, label: number | undefined): void {
    const prim = this.scene.primitives[primIndex];
    if (!prim) throw new Error(`no primitive ${primIndex}`);
    if (label === undefined) delete prim.local_label;
    else prim.local_label = label;
  }

  setTau0(value: number): number {
    this.tau0 = clamp(Math.round(value), 0, this.tau0Max);
    return this.tau0;
  }

  /** Local labels are all-or-nothing on the wire; fill gaps with the global label. */
  sceneForRequest(): SceneDoc {
    const anyLocal = this.scene.primitives.some((p) => p.local_label !== undefined);
    if (!anyLocal) return this.scene;
    return {
      ...this.scene,
      primitives: this.scene.primitives.map((p) => ({
        ...p,
        local_label: p.local_label ?? this.scene.global_label,
      })),
    };
  }

  exportScene(): string {
    return canonicalJson(this.scene);
  }

  importScene(text: string): void {
    const doc = JSON.parse(text) as SceneDoc;
    if (!doc || !Array.isArray(doc.primitives)) throw new Error("scene JSON needs a primitives array");
    doc.version ??= 1;
    doc.global_label ??= 0;
    doc.primitives = doc.primitives.map(clampPrimitive);
    this.scene = doc;
    this.selected = doc.primitives.length ? 0 : null;
  }

  /** Result handler; responses for superseded jobs are dropped. */
  applyResult(jobId: string, result: GenerationResultBody): boolean {
    if (this.activeJobId !== jobId) return false;
    this.lastResult = result;
    this.activeJobId = null;
    return true;
  }
}
