"""Unit tests for streams, metrics, file formats, and the engine driver."""

import dataclasses

import numpy as np
import pytest

from foro.backbone import BackboneConfig, backbone_build
from foro.encoding import (
    batch_solve_oracle,
    classifier_init,
    kem_init,
    nrp_build,
)
from foro.fitness import FitnessConfig
from foro.protocol import (
    EmptyTestSetError,
    Engine,
    IncompleteMatrixError,
    ReplayViolationError,
    StreamError,
    SyntheticSpec,
    Task,
    TaskStream,
    average_accuracy,
    average_forgetting,
    derive_seed,
    evaluate_accuracy,
    generate_synthetic,
    load_feature_stream,
    read_feature_file,
    write_feature_file,
    write_manifest,
)


class TestSeeds:
    def test_deterministic(self):
        assert derive_seed(123, 4) == derive_seed(123, 4)

    def test_distinct_slots(self):
        seeds = {derive_seed(5, i) for i in range(20)}
        assert len(seeds) == 20

    def test_distinct_masters(self):
        assert derive_seed(1, 0) != derive_seed(2, 0)


class TestTask:
    def _task(self):
        return Task(task_id=0, class_ids=(0, 1),
                    test_x=np.zeros((2, 3)), test_labels=np.array([0, 1]),
                    _train_x=np.zeros((4, 3)),
                    _train_labels=np.array([0, 0, 1, 1]))

    def test_read_counting(self):
        task = self._task()
        task.train_data()
        task.train_data()
        assert task.train_reads == 2

    def test_replay_violation_after_release(self):
        task = self._task()
        task.release_train()
        with pytest.raises(ReplayViolationError):
            task.train_data()
        assert task.late_reads == 1

    def test_overlapping_classes_rejected(self):
        a = self._task()
        b = dataclasses.replace(self._task(), task_id=1, class_ids=(1, 2),
                                test_labels=np.array([1, 2]))
        with pytest.raises(StreamError):
            TaskStream(tasks=[a, b], input_kind="features", mode="synthetic")

    def test_label_outside_class_set_rejected(self):
        bad = dataclasses.replace(self._task(), test_labels=np.array([0, 9]))
        with pytest.raises(StreamError):
            TaskStream(tasks=[bad], input_kind="features", mode="synthetic")


class TestSynthetic:
    def test_separable_stream_oracle_accuracy(self):
        # large separation, no drift: a single batch ridge on raw features
        # classifies essentially perfectly
        from foro.encoding import Classifier, one_hot, predict

        spec = SyntheticSpec(tasks=5, classes_per_task=4, kind="features",
                             separation=5.0, shift=0.0, noise=1.0, seed=3)
        stream = generate_synthetic(spec)
        xs, ys = [], []
        for task in stream.tasks:
            x, labels = task.train_data()
            xs.append(x)
            ys.append(labels)
        all_ids = tuple(stream.all_class_ids)
        w = batch_solve_oracle(np.concatenate(xs),
                               one_hot(np.concatenate(ys), all_ids), 0.1)
        clf = Classifier(w=w, class_ids=all_ids)
        correct = total = 0
        for task in stream.tasks:
            _, labels = predict(clf, task.test_x)
            correct += int(np.sum(labels == task.test_labels))
            total += labels.shape[0]
        assert correct / total >= 0.99

    def test_single_task_stream(self):
        stream = generate_synthetic(SyntheticSpec(tasks=1, seed=0))
        assert stream.num_tasks == 1

    def test_same_seed_identical(self):
        spec = SyntheticSpec(tasks=2, seed=9, shift=0.5)
        a = generate_synthetic(spec)
        b = generate_synthetic(spec)
        for ta, tb in zip(a.tasks, b.tasks):
            assert ta.test_x.tobytes() == tb.test_x.tobytes()
            assert ta.train_data()[0].tobytes() == tb.train_data()[0].tobytes()

    def test_shift_moves_later_tasks(self):
        spec = SyntheticSpec(tasks=2, shift=100.0, seed=1)
        stream = generate_synthetic(spec)
        assert stream.tasks[1].test_x.mean() > stream.tasks[0].test_x.mean()

    def test_xor_structure(self):
        stream = generate_synthetic(SyntheticSpec(
            tasks=1, classes_per_task=2, kind="xor", noise=0.1,
            train_per_class=10, test_per_class=10, seed=2))
        task = stream.tasks[0]
        x, y = task.train_data()
        # label = sign of the coordinate product, up to cluster noise
        assert np.mean((np.prod(x, axis=1) > 0) == (y == 1)) > 0.95

    def test_xor_shape_constraints(self):
        from foro.protocol import InvalidSpecError

        with pytest.raises(InvalidSpecError):
            generate_synthetic(SyntheticSpec(tasks=2, kind="xor",
                                             classes_per_task=2))


class TestFeatureFiles:
    def test_round_trip_bitwise(self, tmp_path):
        rng = np.random.default_rng(4)
        feats = rng.standard_normal((7, 5)).astype(np.float32)
        labels = np.array([0, 1, 0, 1, 1, 0, 0], dtype=np.uint32)
        a, b = tmp_path / "a.feat", tmp_path / "b.feat"
        write_feature_file(a, feats, labels)
        write_feature_file(b, *read_feature_file(a))
        assert a.read_bytes() == b.read_bytes()

    def test_manifest_stream(self, tmp_path):
        rng = np.random.default_rng(5)
        entries = []
        for t, ids in enumerate([(0, 1), (2, 3)]):
            for split in ("train", "test"):
                feats = rng.standard_normal((6, 4)).astype(np.float32)
                labels = np.repeat(ids, 3).astype(np.uint32)
                write_feature_file(tmp_path / f"t{t}_{split}.feat",
                                   feats, labels)
            entries.append({"task_id": t, "class_ids": ids,
                            "train_file": f"t{t}_train.feat",
                            "test_file": f"t{t}_test.feat"})
        write_manifest(tmp_path / "manifest.json", entries)
        stream = load_feature_stream(tmp_path / "manifest.json")
        assert stream.num_tasks == 2
        assert stream.input_kind == "features"

    def test_manifest_checksum_mismatch(self, tmp_path):
        feats = np.zeros((2, 3), dtype=np.float32)
        labels = np.zeros(2, dtype=np.uint32)
        for name in ("train.feat", "test.feat"):
            write_feature_file(tmp_path / name, feats, labels)
        write_manifest(tmp_path / "manifest.json",
                       [{"task_id": 0, "class_ids": (0,),
                         "train_file": "train.feat",
                         "test_file": "test.feat"}])
        (tmp_path / "train.feat").write_bytes(b"corrupted")
        with pytest.raises(StreamError):
            load_feature_stream(tmp_path / "manifest.json")

    def test_manifest_overlapping_classes(self, tmp_path):
        feats = np.zeros((2, 3), dtype=np.float32)
        entries = []
        for t in range(2):
            labels = np.array([7, 7], dtype=np.uint32)
            for split in ("train", "test"):
                write_feature_file(tmp_path / f"t{t}_{split}.feat",
                                   feats, labels)
            entries.append({"task_id": t, "class_ids": (7,),
                            "train_file": f"t{t}_train.feat",
                            "test_file": f"t{t}_test.feat"})
        write_manifest(tmp_path / "manifest.json", entries)
        with pytest.raises(StreamError):
            load_feature_stream(tmp_path / "manifest.json")


class TestMetrics:
    def test_constant_predictor(self):
        predicted = np.zeros(10)
        labels = np.repeat([0, 1], 5)
        assert evaluate_accuracy(predicted, labels) == 0.5

    def test_empty_testset(self):
        with pytest.raises(EmptyTestSetError):
            evaluate_accuracy(np.zeros(0), np.zeros(0))

    def test_average_accuracy_hand_case(self):
        matrix = [[0.9], [0.8, 0.9]]
        assert average_accuracy(matrix, 2) == pytest.approx(0.85)

    def test_average_accuracy_single_task(self):
        assert average_accuracy([[0.73]], 1) == pytest.approx(0.73)

    def test_forgetting_hand_case(self):
        matrix = [[0.9], [0.8, 0.9]]
        assert average_forgetting(matrix, 2) == pytest.approx(0.1)

    def test_forgetting_constant_columns(self):
        matrix = [[0.9], [0.9, 0.8], [0.9, 0.8, 0.7]]
        assert average_forgetting(matrix, 3) == 0.0

    def test_forgetting_single_task(self):
        assert average_forgetting([[1.0]], 1) == 0.0

    def test_forgetting_uses_pre_final_peak(self):
        # task 1 peaks at row 2, not row 1
        matrix = [[0.5], [0.9, 1.0], [0.6, 1.0, 1.0]]
        assert average_forgetting(matrix, 3) == pytest.approx(0.15)

    def test_incomplete_matrix(self):
        with pytest.raises(IncompleteMatrixError):
            average_accuracy([[0.9]], 2)


def _patch_engine(mode, generations, seed=0, adoption="first-task"):
    bb = backbone_build(BackboneConfig(layers=2, embed_dim=8, patches=4,
                                       heads=2, seed=derive_seed(seed, 0)))
    proj = nrp_build(8, 128, "relu", seed=derive_seed(seed, 1))
    return Engine(
        mode=mode, proj=proj, kem=kem_init(128, 0.1),
        clf=classifier_init(128), gamma=0.1, backbone=bb, num_prompts=2,
        population=4,
        fitness_cfg=FitnessConfig(lam=0.3, generations=generations,
                                  eval_batch=16),
        alpha=0.1, master_seed=seed, prompt_adoption=adoption, threads=1)


def _patch_stream(seed=0, tasks=2):
    return generate_synthetic(SyntheticSpec(
        tasks=tasks, classes_per_task=2, kind="patches", separation=1.0,
        shift=0.5, noise=0.5, train_per_class=10, test_per_class=10,
        patches=4, embed_dim=8, seed=seed))


class TestEngine:
    def test_zero_generations_matches_kem_only(self):
        rows = {}
        for mode in ("foro", "kem-only"):
            engine = _patch_engine(mode, generations=0)
            stream = _patch_stream()
            matrix = []
            for j, task in enumerate(stream.tasks, start=1):
                engine.learn_task(stream, task)
                matrix.append(engine.evaluate_all(stream, j))
            rows[mode] = matrix
        assert rows["foro"] == rows["kem-only"]

    def test_replay_free(self):
        engine = _patch_engine("foro", generations=2)
        stream = _patch_stream()
        for task in stream.tasks:
            engine.learn_task(stream, task)
        for task in stream.tasks:
            assert task.train_size == 0
            assert task.late_reads == 0

    def test_best_so_far_curve_non_increasing(self):
        engine = _patch_engine("foro", generations=6)
        stream = _patch_stream()
        report = engine.learn_task(stream, stream.tasks[0])
        curve = report.best_fitness_curve
        assert len(curve) == 6
        assert all(b <= a + 1e-15 for a, b in zip(curve, curve[1:]))

    def test_first_task_adoption_freezes_prompt(self):
        engine = _patch_engine("foro", generations=3)
        stream = _patch_stream()
        engine.learn_task(stream, stream.tasks[0])
        frozen = engine.used_prompt.copy()
        engine.learn_task(stream, stream.tasks[1])
        assert np.array_equal(engine.used_prompt, frozen)

    def test_fitness_only_mode_runs(self):
        engine = _patch_engine("fitness-only", generations=2)
        stream = _patch_stream()
        for j, task in enumerate(stream.tasks, start=1):
            engine.learn_task(stream, task)
            row = engine.evaluate_all(stream, j)
            assert len(row) == j
        assert engine.kem.samples_seen == 0

    def test_determinism(self):
        results = []
        for _ in range(2):
            engine = _patch_engine("foro", generations=3, seed=7)
            stream = _patch_stream(seed=11)
            matrix = []
            for j, task in enumerate(stream.tasks, start=1):
                engine.learn_task(stream, task)
                matrix.append(engine.evaluate_all(stream, j))
            results.append(matrix)
        assert results[0] == results[1]
