"""HTTP JSON service: asynchronous generation jobs over loaded checkpoints.

Jobs run on a small worker pool (FIFO beyond the concurrency limit) and
expose monotone step progress; results embed the occupancy grid as a
base64 binary dump plus an OBJ surface mesh, with metrics computed by the
same code path the CLI uses.
"""

from __future__ import annotations

import base64
import contextlib
import json
import logging
import queue
import threading
import time
import uuid
from dataclasses import dataclass, field

from fastapi import FastAPI, HTTPException, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from pydantic import BaseModel

from .appearance import (
    LocalConditioning,
    assign_local_tokens,
    build_appearance_net,
    export_obj,
    extract_surface,
    generate_appearance,
)
from .codec import dump_grid
from .corpus import CATEGORY_TOKENS, COLOR_TOKENS, Dataset
from .geometry import ControlScene, GeometryError, scene_from_dict
from .guidance import GenerationResult, GuidanceConfig, generate_structure
from .metrics import generation_metrics, sweep_tau
from .nets import ShapeConditionedNet, control_tokens
from .training import Checkpoint, build_net

LABEL_TOKENS = {**CATEGORY_TOKENS, **COLOR_TOKENS}

logger = logging.getLogger("shapeforge.service")


def log_event(event: str, **fields):
    logger.info(json.dumps({"event": event, "ts": time.time(), **fields}, sort_keys=True))


@dataclass
class ServerConfig:
    structure_checkpoint: str
    appearance_checkpoint: str | None = None
    dataset: str | None = None
    host: str = "127.0.0.1"
    port: int = 8078
    max_concurrent: int = 2
    queue_capacity: int = 16
    artifact_dir: str | None = None


class GenerateRequest(BaseModel):
    scene: dict
    tau0: int
    label: int | str
    seed: int = 0
    local_labels: list[int] | None = None
    want_appearance: bool = False


class SweepRequest(BaseModel):
    tau0_list: list[int]
    n_controls: int = 64
    seeds: list[int] = list(range(9))


@dataclass
class Job:
    id: str
    kind: str
    status: str = "queued"
    done: int = 0
    total: int = 0
    result: dict | None = None
    error: str | None = None
    timings: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = {
            "job_id": self.id,
            "kind": self.kind,
            "status": self.status,
            "progress": {"done": self.done, "total": self.total},
        }
        if self.result is not None:
            out["result"] = self.result
        if self.error is not None:
            out["error"] = self.error
        if self.timings:
            out["timings"] = self.timings
        return out


def resolve_label(label) -> int:
    if isinstance(label, str):
        if label not in LABEL_TOKENS:
            raise ValueError(f"unknown label {label!r}; known: {sorted(LABEL_TOKENS)}")
        return LABEL_TOKENS[label]
    return int(label)


def generation_payload(result: GenerationResult, spec, colors=None) -> dict:
    """Deterministic result body shared by the service and the CLI."""
    verts, faces, vcolors = extract_surface(result.structure, colors)
    return {
        "structure_b64": base64.b64encode(dump_grid(result.structure)).decode(),
        "mesh_obj": export_obj(verts, faces, vcolors),
        "metrics": generation_metrics(result, spec),
        "config": result.config,
        "voxel_count": result.structure.count(),
    }


class AppState:
    def __init__(self, config: ServerConfig):
        self.config = config
        self.structure_ckpt = Checkpoint.load(config.structure_checkpoint)
        self.net = build_net(self.structure_ckpt)
        self.appearance_ckpt = None
        self.appearance_net = None
        if config.appearance_checkpoint:
            self.appearance_ckpt = Checkpoint.load(config.appearance_checkpoint)
            if self.appearance_ckpt.codec != self.structure_ckpt.codec:
                raise ValueError("structure and appearance checkpoints disagree on the codec spec")
            self.appearance_net = build_appearance_net(self.appearance_ckpt)
        self.dataset = Dataset(config.dataset) if config.dataset else None
        self.jobs: dict[str, Job] = {}
        self.lock = threading.Lock()
        self.work: queue.Queue[str | None] = queue.Queue()
        self.workers: list[threading.Thread] = []
        self.payloads: dict[str, GenerateRequest | SweepRequest] = {}

    @property
    def schedule(self):
        return self.structure_ckpt.schedule

    @property
    def spec(self):
        return self.structure_ckpt.codec

    def queued_count(self) -> int:
        with self.lock:
            return sum(1 for j in self.jobs.values() if j.status == "queued")

    def submit(self, kind: str, payload) -> Job:
        job = Job(id=uuid.uuid4().hex[:12], kind=kind)
        with self.lock:
            self.jobs[job.id] = job
            self.payloads[job.id] = payload
        self.work.put(job.id)
        log_event("job_queued", job_id=job.id, kind=kind)
        return job

    def start_workers(self):
        for i in range(self.config.max_concurrent):
            th = threading.Thread(target=self._worker, name=f"forge-worker-{i}", daemon=True)
            th.start()
            self.workers.append(th)

    def stop_workers(self):
        for _ in self.workers:
            self.work.put(None)
        for th in self.workers:
            th.join(timeout=5)

    def _worker(self):
        while True:
            job_id = self.work.get()
            if job_id is None:
                return
            with self.lock:
                job = self.jobs[job_id]
                payload = self.payloads.pop(job_id)
                job.status = "running"
            log_event("job_started", job_id=job_id)
            started = time.perf_counter()
            try:
                if job.kind == "generate":
                    result = self._run_generation(job, payload)
                    self._persist_artifacts(job_id, result)
                else:
                    result = self._run_sweep(job, payload)
                with self.lock:
                    job.result = result
                    job.timings = {"wall_s": time.perf_counter() - started}
                    job.status = "done"
                log_event("job_done", job_id=job_id, wall_s=job.timings["wall_s"])
            except Exception as exc:  # noqa: BLE001 - job isolation
                with self.lock:
                    job.error = f"{type(exc).__name__}: {exc}"
                    job.status = "error"
                log_event("job_error", job_id=job_id, error=job.error)

    def _persist_artifacts(self, job_id: str, result: dict):
        if not self.config.artifact_dir:
            return
        import os
        from pathlib import Path

        out = Path(self.config.artifact_dir) / job_id
        out.mkdir(parents=True, exist_ok=True)
        for name, data in (
            ("structure.bin", base64.b64decode(result["structure_b64"])),
            ("mesh.obj", result["mesh_obj"].encode()),
            ("result.json", json.dumps({k: result[k] for k in ("metrics", "config", "voxel_count")}, sort_keys=True).encode()),
        ):
            tmp = out / (name + ".tmp")
            tmp.write_bytes(data)
            os.replace(tmp, out / name)

    def _run_generation(self, job: Job, req: GenerateRequest) -> dict:
        scene = scene_from_dict(req.scene)
        if req.local_labels is not None:
            scene = ControlScene(
                primitives=scene.primitives,
                global_label=scene.global_label,
                local_labels=tuple(req.local_labels),
                mesh=scene.mesh,
            )
        label = resolve_label(req.label)
        sched = self.schedule
        struct_steps = sched.steps - req.tau0
        job.total = struct_steps + (sched.steps if req.want_appearance else 0)

        def on_step(done, _total):
            with self.lock:
                job.done = done

        config = GuidanceConfig(schedule=sched, tau0=req.tau0, label=label, seed=req.seed)
        if isinstance(self.net, ShapeConditionedNet):
            from .codec import encode
            from .geometry import voxelize
            from .guidance import normalize_to_unit_cube

            norm_scene, _ = normalize_to_unit_cube(scene)
            zc = encode(voxelize(norm_scene, self.spec.resolution), self.spec)
            field_obj = self.net.bind_control(control_tokens(zc.values))
        else:
            field_obj = self.net
        result = generate_structure(scene, field_obj, config, self.spec, on_step=on_step)

        colors = None
        if req.want_appearance:
            if self.appearance_net is None:
                raise ValueError("no appearance checkpoint loaded")
            locals_ = None
            if result.norm_scene is not None and result.norm_scene.local_labels is not None:
                locals_ = assign_local_tokens(result.structure, result.norm_scene)
            cond = LocalConditioning(global_token=label, local_tokens=locals_)

            def on_app_step(done, _total):
                with self.lock:
                    job.done = struct_steps + done

            colors = generate_appearance(result.structure, self.appearance_net, cond, req.seed, sched)
            with self.lock:
                job.done = job.total
        return generation_payload(result, self.spec, colors)

    def _run_sweep(self, job: Job, req: SweepRequest) -> dict:
        if self.dataset is None:
            raise ValueError("server has no dataset configured")
        job.total = len(req.tau0_list)
        report = sweep_tau(
            self.structure_ckpt,
            self.dataset,
            req.tau0_list,
            seeds=req.seeds,
            n_controls=req.n_controls,
        )
        with self.lock:
            job.done = job.total
        return json.loads(report.to_json())


def create_app(config: ServerConfig) -> FastAPI:
    state = AppState(config)

    @contextlib.asynccontextmanager
    async def lifespan(app: FastAPI):
        state.start_workers()
        log_event("server_start", checkpoint_id=state.structure_ckpt.checkpoint_id())
        yield
        state.stop_workers()

    app = FastAPI(title="shapeforge", lifespan=lifespan)
    app.state.forge = state

    @app.exception_handler(RequestValidationError)
    async def validation_handler(request: Request, exc: RequestValidationError):
        errors = [{"loc": list(e["loc"]), "msg": e["msg"]} for e in exc.errors()]
        return JSONResponse(status_code=400, content={"detail": errors})

    @app.exception_handler(Exception)
    async def error_handler(request: Request, exc: Exception):
        error_id = uuid.uuid4().hex[:12]
        log_event("internal_error", error_id=error_id, error=f"{type(exc).__name__}: {exc}")
        return JSONResponse(status_code=500, content={"detail": "internal error", "error_id": error_id})

    @app.get("/api/health")
    async def health():
        return {
            "status": "ok",
            "checkpoint_id": state.structure_ckpt.checkpoint_id(),
            "T": state.schedule.steps,
            "lambda": state.schedule.rescale,
        }

    @app.get("/api/checkpoint")
    async def checkpoint_info():
        spec = state.spec
        return {
            "checkpoint_id": state.structure_ckpt.checkpoint_id(),
            "kind": state.structure_ckpt.kind,
            "T": state.schedule.steps,
            "lambda": state.schedule.rescale,
            "tau0_max": state.schedule.steps,
            "resolution": spec.resolution,
            "patch": spec.patch,
            "channels": spec.channels,
            "vocab": state.structure_ckpt.vocab,
            "labels": LABEL_TOKENS,
            "has_appearance": state.appearance_net is not None,
        }

    @app.post("/api/generate")
    async def submit_generate(req: GenerateRequest):
        sched = state.schedule
        if not (0 <= req.tau0 <= sched.steps):
            raise HTTPException(
                status_code=400,
                detail=[{"loc": ["body", "tau0"], "msg": f"tau0 must lie in [0, {sched.steps}]"}],
            )
        try:
            scene = scene_from_dict(req.scene)
            resolve_label(req.label)
            if req.local_labels is not None and len(req.local_labels) != len(scene.primitives):
                raise ValueError("local_labels must cover every primitive")
        except (GeometryError, ValueError) as exc:
            raise HTTPException(status_code=400, detail=[{"loc": ["body", "scene"], "msg": str(exc)}])
        if req.want_appearance and state.appearance_net is None:
            raise HTTPException(
                status_code=400,
                detail=[{"loc": ["body", "want_appearance"], "msg": "no appearance checkpoint loaded"}],
            )
        if state.queued_count() >= config.queue_capacity:
            raise HTTPException(status_code=409, detail="job queue is full")
        job = state.submit("generate", req)
        return {"job_id": job.id}

    @app.post("/api/sweep")
    async def submit_sweep(req: SweepRequest):
        if state.dataset is None:
            raise HTTPException(status_code=400, detail=[{"loc": ["body"], "msg": "server has no dataset"}])
        if any(not (0 <= v <= state.schedule.steps) for v in req.tau0_list):
            raise HTTPException(
                status_code=400,
                detail=[{"loc": ["body", "tau0_list"], "msg": f"tau0 must lie in [0, {state.schedule.steps}]"}],
            )
        if state.queued_count() >= config.queue_capacity:
            raise HTTPException(status_code=409, detail="job queue is full")
        job = state.submit("sweep", req)
        return {"job_id": job.id}

    @app.get("/api/jobs/{job_id}")
    async def job_status(job_id: str):
        with state.lock:
            job = state.jobs.get(job_id)
            if job is None:
                raise HTTPException(status_code=404, detail="unknown job id")
            return job.to_dict()

    return app


def serve(config: ServerConfig, ui_dir: str | None = None):
    import uvicorn

    app = create_app(config)
    if ui_dir:
        from fastapi.staticfiles import StaticFiles

        app.mount("/", StaticFiles(directory=ui_dir, html=True), name="ui")
    uvicorn.run(app, host=config.host, port=config.port, log_level="warning")
