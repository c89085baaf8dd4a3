// Wire formats shared with the generation service (scene JSON and job API).

export type Vec3 = [number, number, number];
export type Vec2 = [number, number];

export interface PrimitiveDoc {
  scale: Vec3;
  exponents: Vec2;
  translation: Vec3;
  rotation: Vec3;
  local_label?: number;
}

export interface MeshDoc {
  vertices: number[][];
  faces: number[][];
}

export interface SceneDoc {
  version: number;
  global_label: number;
  primitives: PrimitiveDoc[];
  mesh?: MeshDoc;
}

export interface CheckpointInfo {
  checkpoint_id: string;
  kind: string;
  T: number;
  lambda: number;
  tau0_max: number;
  resolution: number;
  patch: number;
  channels: number;
  vocab: number;
  labels: Record<string, number>;
  has_appearance: boolean;
}

export interface GenerateRequest {
  scene: SceneDoc;
  tau0: number;
  label: number | string;
  seed: number;
  local_labels?: number[];
  want_appearance?: boolean;
}

export interface GenerationMetrics {
  cd_e3: number;
  iou_roundtrip: number;
}

export interface GenerationResultBody {
  structure_b64: string;
  mesh_obj: string;
  metrics: GenerationMetrics;
  config: Record<string, unknown>;
  voxel_count: number;
}

export type JobStatus = "queued" | "running" | "done" | "error";

export interface JobState {
  job_id: string;
  kind: string;
  status: JobStatus;
  progress: { done: number; total: number };
  result?: GenerationResultBody;
  error?: string;
  timings?: Record<string, number>;
}
