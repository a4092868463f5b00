"""HTTP facade over trained models for the design studio.

JSON over HTTP/1.1. Design and tailoring run as asynchronous jobs on a
bounded FIFO worker pool; progress snapshots stream as newline-delimited
JSON. Finished jobs are persisted to the results directory (manifest JSON
plus content-addressed PNGs) and survive a restart; queued or running jobs
do not. Scoring endpoints answer 409 until all models are loaded.
"""

from __future__ import annotations

import base64
import hashlib
import json
import os
import threading
import uuid
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse, Response, StreamingResponse

from . import corpus as corpus_mod
from . import designer, evalmetrics, gan as gan_mod, rank
from .corpus import Corpus, decode_png, encode_png, from_float, to_float
from .tensor import Tensor

ENV_PREFIX = "VPRE_"


@dataclass
class ServiceConfig:
    host: str = "127.0.0.1"
    port: int = 8321
    workers: int = 1
    corpus_dir: str = ""
    dvbpr_checkpoint: str = ""
    gan_checkpoint: str = ""
    classifier_checkpoint: str = ""
    results_dir: str = "results"
    snapshot_every: int = 5
    image_side: int = 32

    @classmethod
    def from_file(cls, path: str | None, env=os.environ) -> "ServiceConfig":
        data = {}
        if path:
            with open(path) as f:
                data = json.load(f)
        cfg = cls(**data)
        for name in ("host", "port", "workers", "corpus_dir", "dvbpr_checkpoint",
                     "gan_checkpoint", "classifier_checkpoint", "results_dir",
                     "snapshot_every", "image_side"):
            raw = env.get(ENV_PREFIX + name.upper())
            if raw is not None:
                cur = getattr(cfg, name)
                setattr(cfg, name, type(cur)(raw) if not isinstance(cur, str) else raw)
        return cfg


class ModelRegistry:
    """Loaded corpus and model checkpoints; scoring is refused until ready."""

    def __init__(self):
        self.corpus: Corpus | None = None
        self.dvbpr = None
        self.gan = None
        self.classifier = None
        self._item_embeddings: np.ndarray | None = None

    @property
    def ready(self) -> bool:
        return all(x is not None for x in (self.corpus, self.dvbpr, self.gan))

    def load(self, cfg: ServiceConfig) -> None:
        corpus = corpus_mod.load_corpus(
            os.path.join(cfg.corpus_dir, "interactions.tsv"),
            os.path.join(cfg.corpus_dir, "items.tsv"),
            os.path.join(cfg.corpus_dir, "images"),
            image_side=cfg.image_side)
        self.corpus = corpus_mod.split_leave_one_out(corpus, seed=0)
        if cfg.classifier_checkpoint:
            self.classifier = evalmetrics.load_classifier(cfg.classifier_checkpoint)
        feats = None
        if cfg.dvbpr_checkpoint:
            self.dvbpr, _ = rank.load_model(cfg.dvbpr_checkpoint, self.corpus, feats)
        if cfg.gan_checkpoint:
            self.gan = gan_mod.load_pair(cfg.gan_checkpoint)

    def item_embeddings(self) -> np.ndarray:
        if self._item_embeddings is None:
            side = self.dvbpr.net.input_side
            images = rank.upscale_images_np(self.corpus.float_images(), side)
            self._item_embeddings = np.concatenate(
                [self.dvbpr.embed_images(Tensor(images[k:k + 256]), mode="eval").data
                 for k in range(0, len(images), 256)], axis=0)
        return self._item_embeddings


class ImageStore:
    """Content-addressed PNG storage; writes are idempotent."""

    def __init__(self, directory: str):
        self.directory = directory
        os.makedirs(directory, exist_ok=True)

    def put(self, image_float: np.ndarray) -> str:
        png = encode_png(from_float(np.clip(image_float, -1.0, 1.0)))
        ref = hashlib.sha256(png).hexdigest()[:16]
        path = os.path.join(self.directory, f"{ref}.png")
        if not os.path.exists(path):
            tmp = path + ".tmp"
            with open(tmp, "wb") as f:
                f.write(png)
            os.replace(tmp, path)
        return ref

    def get(self, ref: str) -> bytes | None:
        if not ref.replace("-", "").isalnum():
            return None
        path = os.path.join(self.directory, f"{ref}.png")
        if not os.path.exists(path):
            return None
        with open(path, "rb") as f:
            return f.read()


_SEQ = __import__("itertools").count()


class JobRecord:
    def __init__(self, job_id: str, kind: str, request: dict):
        self.job_id = job_id
        self.kind = kind
        self.request = request
        self.state = "queued"  # queued -> running -> done | failed
        self.snapshots: list[dict] = []
        self.result: dict | None = None
        self.error: str | None = None
        self.cond = threading.Condition()
        self.submit_seq = next(_SEQ)
        self.start_seq: int | None = None
        self.finish_seq: int | None = None

    def to_dict(self) -> dict:
        return {"job_id": self.job_id, "kind": self.kind, "request": self.request,
                "state": self.state, "snapshots": self.snapshots,
                "result": self.result, "error": self.error,
                "submit_seq": self.submit_seq, "start_seq": self.start_seq,
                "finish_seq": self.finish_seq}


class JobStore:
    """FIFO job execution on a bounded pool, with on-disk persistence of
    completed jobs."""

    def __init__(self, registry: ModelRegistry, images: ImageStore,
                 results_dir: str, workers: int = 1, snapshot_every: int = 5):
        self.registry = registry
        self.images = images
        self.results_dir = results_dir
        self.snapshot_every = snapshot_every
        os.makedirs(results_dir, exist_ok=True)
        self._jobs: dict[str, JobRecord] = {}
        self._lock = threading.Lock()
        self._pool = ThreadPoolExecutor(max_workers=max(1, workers))

    def shutdown(self):
        self._pool.shutdown(wait=False, cancel_futures=True)

    def submit(self, kind: str, request: dict) -> JobRecord:
        job = JobRecord(uuid.uuid4().hex, kind, request)
        with self._lock:
            self._jobs[job.job_id] = job
        self._pool.submit(self._execute, job)
        return job

    def get(self, job_id: str) -> JobRecord | None:
        with self._lock:
            job = self._jobs.get(job_id)
        if job is not None:
            return job
        return self._load_from_disk(job_id)

    def _load_from_disk(self, job_id: str) -> JobRecord | None:
        path = os.path.join(self.results_dir, f"{job_id}.json")
        if not os.path.exists(path):
            return None
        with open(path) as f:
            data = json.load(f)
        job = JobRecord(data["job_id"], data["kind"], data["request"])
        job.state = data["state"]
        job.snapshots = data["snapshots"]
        job.result = data["result"]
        job.error = data.get("error")
        job.submit_seq = data.get("submit_seq", job.submit_seq)
        job.start_seq = data.get("start_seq")
        job.finish_seq = data.get("finish_seq")
        with self._lock:
            self._jobs.setdefault(job_id, job)
        return job

    def _persist(self, job: JobRecord) -> None:
        path = os.path.join(self.results_dir, f"{job.job_id}.json")
        tmp = path + ".tmp"
        with open(tmp, "w") as f:
            json.dump(job.to_dict(), f, sort_keys=True)
        os.replace(tmp, path)

    def _snapshot(self, job: JobRecord, step: int, objectives: np.ndarray,
                  images: np.ndarray) -> None:
        best = int(np.nanargmax(objectives))
        ref = self.images.put(images[best])
        with job.cond:
            job.snapshots.append({"step": int(step),
                                  "objective": float(objectives[best]),
                                  "image_ref": ref})
            job.cond.notify_all()

    def _execute(self, job: JobRecord) -> None:
        with job.cond:
            job.state = "running"
            job.start_seq = next(_SEQ)
            job.cond.notify_all()
        try:
            if job.kind == "design":
                result = self._run_design(job)
            elif job.kind == "tailor":
                result = self._run_tailor(job)
            else:
                raise ValueError(f"unknown job kind {job.kind}")
            with job.cond:
                job.result = result
                job.state = "done"
                job.finish_seq = next(_SEQ)
                job.cond.notify_all()
            self._persist(job)
        except Exception as e:  # surfaced through the job record
            with job.cond:
                job.error = f"{type(e).__name__}: {e}"
                job.state = "failed"
                job.finish_seq = next(_SEQ)
                job.cond.notify_all()
            self._persist(job)

    def _candidate_payload(self, cand: designer.Candidate) -> dict:
        return {"image_ref": self.images.put(cand.image),
                "objective": cand.objective,
                "preference": cand.preference,
                "quality_penalty": cand.quality_penalty,
                "latent": [float(v) for v in cand.latent],
                "trace": cand.trace,
                "start_index": cand.start_index}

    def _run_design(self, job: JobRecord) -> dict:
        reg = self.registry
        r = job.request
        query = designer.DesignQuery(
            user_id=r["user"], category_id=r["category"],
            quality_weight=r.get("eta", 1.0), n_starts=r.get("m", 64),
            k=r.get("k", 3), mode=r.get("mode", "rank"),
            iterations=r.get("iterations", 50), seed=r.get("seed", 0))
        every = self.snapshot_every

        def hook(step, objectives, images):
            if step % every == 0 or step == query.iterations:
                self._snapshot(job, step, objectives, images)

        cands = designer.synthesize_best(query, reg.corpus, reg.dvbpr, reg.gan,
                                         snapshot_hook=hook)
        rng = np.random.default_rng(query.seed)
        chosen = designer.select_top_k(cands, min(query.k, len(cands)),
                                       mode=query.mode, rng=rng)
        return {"candidates": [self._candidate_payload(c) for c in chosen],
                "n_starts": query.n_starts, "mode": query.mode,
                "eta": query.quality_weight}

    def _run_tailor(self, job: JobRecord) -> dict:
        reg = self.registry
        r = job.request
        corpus = reg.corpus
        if "item_id" in r and r["item_id"]:
            idx = corpus.item_index.get(r["item_id"])
            if idx is None:
                raise KeyError(f"unknown item {r['item_id']!r}")
            proto = to_float(corpus.items[idx].image)
        else:
            proto = to_float(decode_png(base64.b64decode(r["image_b64"])))
        iterations = r.get("iterations", 50)
        every = self.snapshot_every

        def hook(step, objectives, images):
            if step % every == 0 or step in (0, iterations):
                self._snapshot(job, step, objectives, images)

        res = designer.tailor(proto, r["user"], r["category"], corpus,
                              reg.dvbpr, reg.gan, iterations=iterations,
                              quality_weight=r.get("eta", 1.0),
                              snapshot_every=every, seed=r.get("seed", 0),
                              snapshot_hook=hook)
        return {"inversion_error": res.inversion.error,
                "prototype_ref": self.images.put(res.inversion.image),
                "checkpoints": [{"step": cp.step, "preference": cp.preference,
                                 "objective": cp.objective,
                                 "image_ref": self.images.put(cp.image)}
                                for cp in res.checkpoints],
                "final": self._candidate_payload(res.final)}


def _error(status: int, message: str) -> JSONResponse:
    return JSONResponse({"error": message}, status_code=status)


def create_app(config: ServiceConfig, registry: ModelRegistry | None = None) -> FastAPI:
    app = FastAPI(title="vpre design service")
    if registry is None:
        registry = ModelRegistry()
        registry.load(config)
    images = ImageStore(os.path.join(config.results_dir, "images"))
    jobs = JobStore(registry, images, config.results_dir,
                    workers=config.workers, snapshot_every=config.snapshot_every)
    app.state.registry = registry
    app.state.jobs = jobs

    def require_ready():
        if not registry.ready:
            return _error(409, "models not loaded")
        return None

    def resolve_category(value):
        corpus = registry.corpus
        if isinstance(value, str) and value in corpus.category_names:
            return corpus.category_names.index(value)
        if isinstance(value, int) and 0 <= value < corpus.n_categories:
            return value
        return None

    @app.get("/health")
    def health():
        return {"status": "ok", "ready": registry.ready}

    @app.get("/users")
    def users(page: int = 0, page_size: int = 50):
        corpus = registry.corpus
        if corpus is None:
            return _error(409, "models not loaded")
        lo = page * page_size
        rows = [{"user_id": u, "n_interactions": len(corpus.positives[u])}
                for u in corpus.users[lo:lo + page_size]]
        return {"users": rows, "page": page, "total": corpus.n_users}

    @app.get("/users/{user_id}/history")
    def user_history(user_id: str):
        corpus = registry.corpus
        if corpus is None:
            return _error(409, "models not loaded")
        if user_id not in corpus.user_index:
            return _error(404, f"unknown user {user_id!r}")
        rows = []
        for iid in corpus.positives[user_id]:
            it = corpus.items[corpus.item_index[iid]]
            ref = images.put(to_float(it.image))
            rows.append({"item_id": iid, "category": corpus.category_names[it.category_id],
                         "category_id": it.category_id, "image_url": f"/images/{ref}"})
        return {"user": user_id, "items": rows}

    @app.get("/categories")
    def categories():
        corpus = registry.corpus
        if corpus is None:
            return _error(409, "models not loaded")
        counts = {}
        for it in corpus.items:
            counts[it.category_id] = counts.get(it.category_id, 0) + 1
        return {"categories": [{"category_id": k, "name": nm, "n_items": counts.get(k, 0)}
                               for k, nm in enumerate(corpus.category_names)]}

    @app.get("/items")
    def items(category: str | None = None, page: int = 0, page_size: int = 50):
        corpus = registry.corpus
        if corpus is None:
            return _error(409, "models not loaded")
        idxs = range(corpus.n_items)
        if category is not None:
            cat = resolve_category(int(category) if category.isdigit() else category)
            if cat is None:
                return _error(404, f"unknown category {category!r}")
            idxs = corpus.category_items(cat)
        idxs = list(idxs)
        lo = page * page_size
        rows = []
        for k in idxs[lo:lo + page_size]:
            it = corpus.items[k]
            ref = images.put(to_float(it.image))
            rows.append({"item_id": it.item_id, "category_id": it.category_id,
                         "category": corpus.category_names[it.category_id],
                         "image_url": f"/images/{ref}"})
        return {"items": rows, "page": page, "total": len(idxs)}

    @app.get("/recommend")
    def recommend(user: str, k: int = 10, category: str | None = None):
        err = require_ready()
        if err:
            return err
        corpus = registry.corpus
        if user not in corpus.user_index:
            return _error(404, f"unknown user {user!r}")
        if k < 1:
            return _error(400, "k must be >= 1")
        theta = registry.dvbpr.visual_factors.data[corpus.user_index[user]]
        scores = registry.item_embeddings() @ theta
        pool = np.arange(corpus.n_items)
        if category is not None:
            cat = resolve_category(int(category) if category.isdigit() else category)
            if cat is None:
                return _error(404, f"unknown category {category!r}")
            pool = np.array(corpus.category_items(cat), dtype=np.int64)
        order = pool[np.argsort(-scores[pool])[:k]]
        rows = []
        for idx in order:
            it = corpus.items[int(idx)]
            ref = images.put(to_float(it.image))
            rows.append({"item_id": it.item_id, "score": float(scores[idx]),
                         "category": corpus.category_names[it.category_id],
                         "image_url": f"/images/{ref}"})
        return {"user": user, "items": rows}

    @app.post("/design")
    async def design(request: Request):
        err = require_ready()
        if err:
            return err
        try:
            body = await request.json()
        except Exception:
            return _error(400, "request body must be JSON")
        if not isinstance(body, dict) or "user" not in body or "category" not in body:
            return _error(400, "fields 'user' and 'category' are required")
        corpus = registry.corpus
        if body["user"] not in corpus.user_index:
            return _error(404, f"unknown user {body['user']!r}")
        cat = resolve_category(body["category"])
        if cat is None:
            return _error(404, f"unknown category {body['category']!r}")
        body["category"] = cat
        try:
            designer.DesignQuery(user_id=body["user"], category_id=cat,
                                 quality_weight=float(body.get("eta", 1.0)),
                                 n_starts=int(body.get("m", 64)),
                                 k=int(body.get("k", 3)),
                                 mode=body.get("mode", "rank"),
                                 iterations=int(body.get("iterations", 50)))
        except (ValueError, TypeError) as e:
            return _error(400, str(e))
        job = jobs.submit("design", body)
        return {"job_id": job.job_id}

    @app.post("/tailor")
    async def tailor_endpoint(request: Request):
        err = require_ready()
        if err:
            return err
        try:
            body = await request.json()
        except Exception:
            return _error(400, "request body must be JSON")
        if not isinstance(body, dict) or "user" not in body or "category" not in body:
            return _error(400, "fields 'user' and 'category' are required")
        if not body.get("item_id") and not body.get("image_b64"):
            return _error(400, "either 'item_id' or 'image_b64' is required")
        corpus = registry.corpus
        if body["user"] not in corpus.user_index:
            return _error(404, f"unknown user {body['user']!r}")
        if body.get("item_id") and body["item_id"] not in corpus.item_index:
            return _error(404, f"unknown item {body['item_id']!r}")
        cat = resolve_category(body["category"])
        if cat is None:
            return _error(404, f"unknown category {body['category']!r}")
        body["category"] = cat
        if int(body.get("iterations", 50)) < 0:
            return _error(400, "iterations must be >= 0")
        job = jobs.submit("tailor", body)
        return {"job_id": job.job_id}

    @app.get("/jobs/{job_id}")
    def job_state(job_id: str):
        job = jobs.get(job_id)
        if job is None:
            return _error(404, f"unknown job {job_id!r}")
        with job.cond:
            return job.to_dict()

    @app.get("/jobs/{job_id}/stream")
    def job_stream(job_id: str, request: Request, from_index: int = 0):
        job = jobs.get(job_id)
        if job is None:
            return _error(404, f"unknown job {job_id!r}")

        def gen():
            idx = max(0, from_index)
            while True:
                with job.cond:
                    while len(job.snapshots) <= idx and job.state in ("queued", "running"):
                        job.cond.wait(timeout=0.5)
                    pending = job.snapshots[idx:]
                    state = job.state
                for off, snap in enumerate(pending):
                    yield json.dumps({"type": "snapshot", "index": idx + off, **snap}) + "\n"
                idx += len(pending)
                if state in ("done", "failed"):
                    yield json.dumps({"type": "end", "state": state}) + "\n"
                    return

        return StreamingResponse(gen(), media_type="application/x-ndjson")

    @app.get("/images/{ref}")
    def image(ref: str):
        png = images.get(ref)
        if png is None:
            return _error(404, f"unknown image {ref!r}")
        return Response(png, media_type="image/png")

    return app


def run_server(config: ServiceConfig) -> None:
    import uvicorn
    app = create_app(config)
    uvicorn.run(app, host=config.host, port=config.port, log_level="warning")
