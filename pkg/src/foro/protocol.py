"""Task streams, the incremental-learning driver, and evaluation metrics.

Streams are class-incremental: class sets are disjoint across tasks and the
driver never re-reads a finished task's training data (each task's training
arrays are dropped once learned; late reads raise and are counted). A full
experiment is a pure function of (config, master seed); all randomness is
derived from the master seed through a splitmix64 fan-out.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from foro import cma
from foro.backbone import Backbone, LayerStats
from foro.encoding import (
    Classifier, Kem, RandomProjection, classifier_extend, kem_update,
    nrp_project, one_hot, ridge_fit, weights_update,
)
from foro.fitness import FitnessConfig, GlobalStats, evaluate_prompt, update_history

FEATURE_MAGIC = b"FOROFEAT"
FEATURE_VERSION = 1


class InvalidSpecError(ValueError):
    pass


class StreamError(ValueError):
    pass


class ReplayViolationError(RuntimeError):
    pass


class EmptyTestSetError(ValueError):
    pass


class IncompleteMatrixError(ValueError):
    pass


# ---------------------------------------------------------------------------
# seeding

def _splitmix64(state: int) -> int:
    state = (state + 0x9E3779B97F4A7C15) & 0xFFFFFFFFFFFFFFFF
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & 0xFFFFFFFFFFFFFFFF
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & 0xFFFFFFFFFFFFFFFF
    return z ^ (z >> 31)


def derive_seed(master: int, index: int) -> int:
    """Independent per-module seed: splitmix64 of master advanced `index` times."""
    state = master & 0xFFFFFFFFFFFFFFFF
    out = 0
    for _ in range(index + 1):
        out = _splitmix64(state)
        state = (state + 0x9E3779B97F4A7C15) & 0xFFFFFFFFFFFFFFFF
    return out


# Fixed fan-out slots; per-task slots start at _SEED_TASK_BASE + task index.
SEED_BACKBONE = 0
SEED_NRP = 1
SEED_CMA = 2
SEED_DATA = 3
_SEED_TASK_BASE = 16


# ---------------------------------------------------------------------------
# tasks and streams

@dataclass
class Task:
    """One task's data; training arrays are dropped after learning."""

    task_id: int
    class_ids: tuple[int, ...]
    test_x: np.ndarray
    test_labels: np.ndarray
    _train_x: np.ndarray | None = None
    _train_labels: np.ndarray | None = None
    train_reads: int = 0
    late_reads: int = 0

    def train_data(self) -> tuple[np.ndarray, np.ndarray]:
        if self._train_x is None:
            self.late_reads += 1
            raise ReplayViolationError(
                f"task {self.task_id} training data was already released")
        self.train_reads += 1
        return self._train_x, self._train_labels

    def release_train(self) -> None:
        self._train_x = None
        self._train_labels = None

    @property
    def train_size(self) -> int:
        return 0 if self._train_x is None else self._train_x.shape[0]


@dataclass
class TaskStream:
    tasks: list[Task]
    input_kind: str          # "patches" or "features"
    mode: str                # "synthetic" or "feature-file"

    def __post_init__(self):
        seen: set[int] = set()
        for task in self.tasks:
            ids = set(task.class_ids)
            if ids & seen:
                raise StreamError(
                    f"task {task.task_id} shares classes {sorted(ids & seen)} "
                    "with an earlier task")
            seen |= ids
            for label in np.concatenate([task.test_labels]):
                if int(label) not in ids:
                    raise StreamError(
                        f"task {task.task_id} sample labeled {label} outside "
                        f"its class set")

    @property
    def num_tasks(self) -> int:
        return len(self.tasks)

    @property
    def all_class_ids(self) -> list[int]:
        out: list[int] = []
        for task in self.tasks:
            out.extend(task.class_ids)
        return out


@dataclass(frozen=True)
class SyntheticSpec:
    """Deterministic desk-scale stream generator.

    kind "features": raw feature-vector clusters (drives KEM-only learning).
    kind "patches":  patch-grid inputs for the full prompt-search pipeline.
    kind "xor":      the four-cluster XOR construction (2 classes, 1 task).
    Task t's inputs are offset by t*shift (t counted from 0), which models
    per-task distribution drift.
    """

    tasks: int = 5
    classes_per_task: int = 4
    kind: str = "features"
    separation: float = 5.0
    shift: float = 0.0
    train_per_class: int = 25
    test_per_class: int = 25
    noise: float = 1.0
    feature_dim: int = 16
    patches: int = 8
    embed_dim: int = 16
    seed: int = 0

    def validate(self) -> None:
        if self.kind not in ("features", "patches", "xor"):
            raise InvalidSpecError(f"unknown stream kind {self.kind!r}")
        if self.tasks < 1 or self.classes_per_task < 1:
            raise InvalidSpecError("tasks and classes_per_task must be >= 1")
        if self.separation <= 0:
            raise InvalidSpecError("separation must be positive")
        if self.train_per_class < 1 or self.test_per_class < 1:
            raise InvalidSpecError("need at least one sample per class per split")
        if self.kind == "xor" and (self.tasks != 1 or self.classes_per_task != 2):
            raise InvalidSpecError("xor streams are a single 2-class task")


def _cluster_samples(rng, mean, count, noise):
    return mean + rng.standard_normal((count,) + mean.shape) * noise


def generate_synthetic(spec: SyntheticSpec) -> TaskStream:
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    if spec.kind == "xor":
        return _generate_xor(spec, rng)
    num_classes = spec.tasks * spec.classes_per_task
    if spec.kind == "features":
        shape = (spec.feature_dim,)
    else:
        shape = (spec.patches, spec.embed_dim)
    means = rng.standard_normal((num_classes,) + shape) * spec.separation
    tasks = []
    for t in range(spec.tasks):
        ids = tuple(range(t * spec.classes_per_task, (t + 1) * spec.classes_per_task))
        offset = t * spec.shift
        train_x, train_y, test_x, test_y = [], [], [], []
        for cid in ids:
            train_x.append(_cluster_samples(rng, means[cid], spec.train_per_class,
                                            spec.noise) + offset)
            train_y.append(np.full(spec.train_per_class, cid))
            test_x.append(_cluster_samples(rng, means[cid], spec.test_per_class,
                                           spec.noise) + offset)
            test_y.append(np.full(spec.test_per_class, cid))
        tasks.append(Task(
            task_id=t,
            class_ids=ids,
            test_x=np.concatenate(test_x),
            test_labels=np.concatenate(test_y),
            _train_x=np.concatenate(train_x),
            _train_labels=np.concatenate(train_y),
        ))
    kind = "features" if spec.kind == "features" else "patches"
    return TaskStream(tasks=tasks, input_kind=kind, mode="synthetic")


def _generate_xor(spec: SyntheticSpec, rng) -> TaskStream:
    centers = np.array([[1.0, 1.0], [-1.0, -1.0], [1.0, -1.0], [-1.0, 1.0]])
    labels = np.array([1, 1, 0, 0])   # sign of the coordinate product
    splits = {}
    for name, per_cluster in (("train", spec.train_per_class),
                              ("test", spec.test_per_class)):
        xs, ys = [], []
        for center, label in zip(centers, labels):
            xs.append(center + rng.standard_normal((per_cluster, 2)) * spec.noise)
            ys.append(np.full(per_cluster, label))
        splits[name] = (np.concatenate(xs), np.concatenate(ys))
    task = Task(
        task_id=0, class_ids=(0, 1),
        test_x=splits["test"][0], test_labels=splits["test"][1],
        _train_x=splits["train"][0], _train_labels=splits["train"][1],
    )
    return TaskStream(tasks=[task], input_kind="features", mode="synthetic")


# ---------------------------------------------------------------------------
# feature files and manifests

def write_feature_file(path, features: np.ndarray, labels: np.ndarray) -> None:
    features = np.ascontiguousarray(features, dtype="<f4")
    labels = np.ascontiguousarray(labels, dtype="<u4")
    if features.ndim != 2 or labels.shape != (features.shape[0],):
        raise StreamError("feature file needs (n, d) features and n labels")
    n, d = features.shape
    with open(path, "wb") as fh:
        fh.write(FEATURE_MAGIC)
        fh.write(struct.pack("<HII", FEATURE_VERSION, n, d))
        fh.write(features.tobytes())
        fh.write(labels.tobytes())


def read_feature_file(path) -> tuple[np.ndarray, np.ndarray]:
    with open(path, "rb") as fh:
        blob = fh.read()
    header = len(FEATURE_MAGIC) + struct.calcsize("<HII")
    if len(blob) < header or blob[:len(FEATURE_MAGIC)] != FEATURE_MAGIC:
        raise StreamError(f"{path}: not a feature file")
    version, n, d = struct.unpack_from("<HII", blob, len(FEATURE_MAGIC))
    if version != FEATURE_VERSION:
        raise StreamError(f"{path}: unsupported version {version}")
    expected = header + 4 * n * d + 4 * n
    if len(blob) != expected:
        raise StreamError(f"{path}: size {len(blob)} != expected {expected}")
    feats = np.frombuffer(blob, dtype="<f4", count=n * d, offset=header)
    labels = np.frombuffer(blob, dtype="<u4", count=n, offset=header + 4 * n * d)
    return feats.reshape(n, d).copy(), labels.astype(np.int64)


def _sha256_file(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def write_manifest(path, entries: list[dict]) -> None:
    """Entries carry task_id, class_ids, train_file, test_file; checksums are
    computed here. File paths are stored relative to the manifest."""
    base = Path(path).parent
    tasks = []
    for entry in entries:
        tasks.append({
            "task_id": int(entry["task_id"]),
            "class_ids": [int(c) for c in entry["class_ids"]],
            "train_file": str(entry["train_file"]),
            "test_file": str(entry["test_file"]),
            "sha256": {
                "train": _sha256_file(base / entry["train_file"]),
                "test": _sha256_file(base / entry["test_file"]),
            },
        })
    Path(path).write_text(json.dumps({"tasks": tasks}, indent=2) + "\n")


def load_feature_stream(manifest_path) -> TaskStream:
    manifest_path = Path(manifest_path)
    if not manifest_path.exists():
        raise StreamError(f"manifest {manifest_path} does not exist")
    doc = json.loads(manifest_path.read_text())
    base = manifest_path.parent
    tasks = []
    dim = None
    for entry in doc["tasks"]:
        arrays = {}
        for split in ("train", "test"):
            file_path = base / entry[f"{split}_file"]
            if not file_path.exists():
                raise StreamError(f"missing feature file {file_path}")
            actual = _sha256_file(file_path)
            if actual != entry["sha256"][split]:
                raise StreamError(
                    f"{file_path}: checksum mismatch "
                    f"({actual} != {entry['sha256'][split]})")
            arrays[split] = read_feature_file(file_path)
        for split in ("train", "test"):
            if dim is None:
                dim = arrays[split][0].shape[1]
            elif arrays[split][0].shape[1] != dim:
                raise StreamError("inconsistent feature widths across files")
        ids = tuple(int(c) for c in entry["class_ids"])
        for split in ("train", "test"):
            bad = set(int(v) for v in arrays[split][1]) - set(ids)
            if bad:
                raise StreamError(
                    f"task {entry['task_id']}: labels {sorted(bad)} outside "
                    f"declared class set")
        tasks.append(Task(
            task_id=int(entry["task_id"]),
            class_ids=ids,
            test_x=arrays["test"][0].astype(np.float64),
            test_labels=arrays["test"][1],
            _train_x=arrays["train"][0].astype(np.float64),
            _train_labels=arrays["train"][1],
        ))
    return TaskStream(tasks=tasks, input_kind="features", mode="feature-file")


# ---------------------------------------------------------------------------
# metrics

def evaluate_accuracy(predicted: np.ndarray, labels: np.ndarray) -> float:
    if labels.shape[0] == 0:
        raise EmptyTestSetError("cannot score an empty test set")
    return float(np.mean(predicted == labels))


def average_accuracy(matrix: list[list[float]], num_tasks: int) -> float:
    if len(matrix) < num_tasks or len(matrix[num_tasks - 1]) != num_tasks:
        raise IncompleteMatrixError(
            f"need a complete row for T={num_tasks}")
    return float(np.mean(matrix[num_tasks - 1]))


def average_forgetting(matrix: list[list[float]], num_tasks: int) -> float:
    """Mean over tasks of (peak pre-final accuracy - final accuracy).

    The max runs over rows j in {t, ..., T-1} (1-indexed): earlier rows have
    no entry for task t. Defined as 0 for a single task.
    """
    if num_tasks == 1:
        return 0.0
    for j in range(num_tasks):
        if len(matrix) <= j or len(matrix[j]) != j + 1:
            raise IncompleteMatrixError(f"row {j + 1} incomplete")
    final = matrix[num_tasks - 1]
    total = 0.0
    for t in range(num_tasks - 1):
        peak = max(matrix[j][t] for j in range(t, num_tasks - 1))
        total += peak - final[t]
    return total / (num_tasks - 1)


# ---------------------------------------------------------------------------
# the driver

@dataclass
class TaskReport:
    task_id: int
    best_fitness_curve: list[float]      # best-so-far per generation
    best_fitness: float | None
    seconds: float = 0.0


class Engine:
    """Owns all learner state and runs the per-task update loop.

    Modes: "foro" (prompt search + knowledge encoding), "kem-only" (zero
    prompt, encoding only), "fitness-only" (prompt search, per-task throwaway
    ridge instead of the recursive encoder).
    """

    def __init__(self,
                 mode: str,
                 proj: RandomProjection,
                 kem: Kem,
                 clf: Classifier,
                 gamma: float,
                 backbone: Backbone | None = None,
                 num_prompts: int = 3,
                 population: int = 6,
                 fitness_cfg: FitnessConfig | None = None,
                 alpha: float = 0.1,
                 covariance: str = "full",
                 initial_step: float = 0.3,
                 prompt_adoption: str = "first-task",
                 master_seed: int = 0,
                 threads: int = 1):
        if mode not in ("foro", "kem-only", "fitness-only"):
            raise InvalidSpecError(f"unknown mode {mode!r}")
        if covariance not in ("full", "block-diagonal"):
            raise InvalidSpecError(f"unknown covariance mode {covariance!r}")
        if prompt_adoption not in ("first-task", "every-task"):
            raise InvalidSpecError(f"unknown adoption policy {prompt_adoption!r}")
        self.mode = mode
        self.backbone = backbone
        self.proj = proj
        self.kem = kem
        self.clf = clf
        self.gamma = float(gamma)
        self.num_prompts = num_prompts
        self.fitness_cfg = fitness_cfg or FitnessConfig()
        self.hist = GlobalStats(alpha=alpha)
        self.master_seed = master_seed
        self.threads = max(1, threads)
        self.prompt_adoption = prompt_adoption
        self.cma_state: cma.CmaState | None = None
        self.used_prompt: np.ndarray | None = None
        if backbone is not None:
            self.used_prompt = np.zeros((num_prompts, backbone.config.embed_dim))
        if mode != "kem-only" and backbone is not None:
            n = num_prompts * backbone.config.embed_dim
            block = backbone.config.embed_dim if covariance == "block-diagonal" else None
            self.cma_state = cma.cma_init(
                n, population, seed=derive_seed(master_seed, SEED_CMA),
                step_size0=initial_step, block_size=block)

    # -- feature extraction -------------------------------------------------

    def _features(self, stream_kind: str, x: np.ndarray,
                  prompts: np.ndarray | None) -> tuple[np.ndarray, LayerStats | None]:
        if stream_kind == "features":
            return np.asarray(x, dtype=np.float64), None
        raw, stats = self.backbone.batch_forward(prompts, x)
        return raw, stats

    # -- learning -----------------------------------------------------------

    def _score_prompt(self, prompts, x, labels, class_ids) -> float:
        loss, _ = evaluate_prompt(
            prompts, x, labels, class_ids, self.backbone, self.proj,
            self.hist, self.fitness_cfg.lam, self.gamma)
        return loss

    def learn_task(self, stream: TaskStream, task: Task) -> TaskReport:
        train_x, train_labels = task.train_data()
        self.clf = classifier_extend(self.clf, task.class_ids)

        curve: list[float] = []
        best_fitness = None
        searchable = (stream.input_kind == "patches"
                      and self.mode in ("foro", "fitness-only")
                      and self.cma_state is not None
                      and self.fitness_cfg.generations > 0)
        if searchable:
            best_genome, best_fitness, curve = self._search_prompts(
                task, train_x, train_labels)
            # Adoption referendum on the full training set. Once the feature
            # map has encoded a task, changing the prompt invalidates every
            # previously encoded feature (replay-free: they cannot be
            # recomputed), so by default adoption is restricted to the first
            # task; "every-task" re-opens it.
            may_adopt = (self.prompt_adoption == "every-task"
                         or not self.hist.initialized)
            if may_adopt:
                candidate = best_genome.reshape(self.num_prompts, -1)
                f_cand = self._score_prompt(candidate, train_x, train_labels,
                                            task.class_ids)
                f_used = self._score_prompt(self.used_prompt, train_x,
                                            train_labels, task.class_ids)
                if f_cand < f_used:
                    self.used_prompt = candidate

        if stream.input_kind == "patches":
            feats, stats = self._features("patches", train_x, self.used_prompt)
        else:
            feats, stats = self._features("features", train_x, None)

        h = nrp_project(self.proj, feats)
        y = one_hot(train_labels, self.clf.class_ids)
        if self.mode == "fitness-only":
            # per-task ridge head: only the new classes' columns are fitted
            local = ridge_fit(h, one_hot(train_labels, task.class_ids), self.gamma)
            w = self.clf.w.copy()
            col = {c: i for i, c in enumerate(self.clf.class_ids)}
            for k, cid in enumerate(task.class_ids):
                w[:, col[cid]] = local[:, k]
            self.clf = Classifier(w=w, class_ids=self.clf.class_ids)
        else:
            self.kem = kem_update(self.kem, h)
            self.clf = weights_update(self.clf, self.kem, h, y)
        if stats is not None:
            self.hist = update_history(self.hist, stats)
        task.release_train()
        return TaskReport(task_id=task.task_id, best_fitness_curve=curve,
                          best_fitness=best_fitness)

    def _search_prompts(self, task: Task, train_x, train_labels):
        from concurrent.futures import ThreadPoolExecutor

        cfg = self.fitness_cfg
        batch_rng = np.random.default_rng(
            derive_seed(self.master_seed, _SEED_TASK_BASE + task.task_id))
        order = batch_rng.permutation(train_x.shape[0])
        cursor = 0

        def next_batch():
            nonlocal order, cursor
            size = min(cfg.eval_batch, train_x.shape[0])
            if cursor + size > order.shape[0]:
                order = batch_rng.permutation(train_x.shape[0])
                cursor = 0
            idx = order[cursor:cursor + size]
            cursor += size
            return train_x[idx], train_labels[idx]

        def score(genome, batch, labels):
            prompts = genome.reshape(self.num_prompts, -1)
            loss, _ = evaluate_prompt(
                prompts, batch, labels, task.class_ids, self.backbone,
                self.proj, self.hist, cfg.lam, self.gamma)
            return loss

        # baseline: the current distribution mean, for selection only
        batch, labels = next_batch()
        best_genome = self.cma_state.mean.copy()
        best_fitness = score(best_genome, batch, labels)

        curve = []
        state = self.cma_state
        for _ in range(cfg.generations):
            batch, labels = next_batch()
            candidates = cma.cma_ask(state)
            if self.threads > 1:
                with ThreadPoolExecutor(max_workers=self.threads) as pool:
                    losses = list(pool.map(
                        lambda c: score(c.genome, batch, labels), candidates))
            else:
                losses = [score(c.genome, batch, labels) for c in candidates]
            evaluated = [c.with_fitness(v) for c, v in zip(candidates, losses)]
            state = cma.cma_tell(state, evaluated)
            gen_best = cma.cma_best(evaluated)
            if gen_best.fitness < best_fitness:
                best_fitness = gen_best.fitness
                best_genome = gen_best.genome.copy()
            curve.append(best_fitness)
        self.cma_state = state
        return best_genome, best_fitness, curve

    # -- evaluation ---------------------------------------------------------

    def evaluate_all(self, stream: TaskStream, learned_up_to: int) -> list[float]:
        """Row `learned_up_to` of the accuracy matrix (1-indexed row length)."""
        from foro.encoding import predict

        prompts = self.used_prompt
        row = []
        for t in range(learned_up_to):
            task = stream.tasks[t]
            feats, _ = self._features(stream.input_kind, task.test_x, prompts)
            h = nrp_project(self.proj, feats)
            _, labels = predict(self.clf, h)
            row.append(evaluate_accuracy(labels, np.asarray(task.test_labels)))
        return row
