import numpy as np
import pytest

from plan_cl import nn
from plan_cl.tasks import (
    CsvFormatError, CsvSchema, gen_gaussian_clusters, gen_rotated_features, load_csv_stream,
    n_train_of, rotation_matrix, write_csv_stream,
)
from plan_cl.tensor import make_rng


def test_default_protocol_shapes():
    s = gen_gaussian_clusters(5, 4, 64, 250, 3.0, 0)
    assert len(s) == 5 and s.n_classes == 20 and s.dim == 64
    for t, task in enumerate(s.tasks):
        assert (task.class_start, task.class_stop) == (4 * t, 4 * t + 4)
        assert task.train_x.shape == (800, 64) and task.test_x.shape == (200, 64)
        assert np.bincount(task.train_y - task.class_start).tolist() == [200] * 4
    s.check()


def test_generator_deterministic():
    a = gen_gaussian_clusters(2, 3, 5, 10, 2.0, 9)
    b = gen_gaussian_clusters(2, 3, 5, 10, 2.0, 9)
    assert a == b and a.digest() == b.digest()
    assert a != gen_gaussian_clusters(2, 3, 5, 10, 2.0, 10)


def test_train_test_disjoint():
    task = gen_gaussian_clusters(1, 3, 4, 30, 1.0, 0).tasks[0]
    rows = {tuple(r) for r in task.train_x}
    assert not rows & {tuple(r) for r in task.test_x}


def test_split_rounding():
    assert [n_train_of(n) for n in (1, 2, 5, 10, 250)] == [1, 2, 4, 8, 200]


def _train_probe(task, epochs=60, lr=0.05, seed=0):
    rng = make_rng(seed)
    k = task.train_x.shape[1]
    model = nn.Mlp([nn.AdapterLinear(np.eye(k))], nn.GrowingHead(k))
    block = model.head.add_block(task.n_classes, rng, 0.01)
    opt_w, opt_b = nn.AdamState(lr=lr), nn.AdamState(lr=lr)
    y = task.train_y - task.class_start
    for _ in range(epochs):
        for idx in nn.iterate_minibatches(len(y), 32, rng):
            logits, cache = nn.forward(model, task.train_x[idx])
            _, dl = nn.cross_entropy(logits, y[idx])
            dw, db = nn.backward(model, cache, dl).head[0]
            model.head.set_block(0, nn.adam_step(opt_w, block.weight, dw), nn.adam_step(opt_b, block.bias, db))
            block = model.head.blocks[0]
    pred = nn.predict(model, task.test_x)
    return float(np.mean(pred == task.test_y - task.class_start))


def test_well_separated_is_linearly_separable():
    task = gen_gaussian_clusters(1, 4, 32, 250, 10.0, 0).tasks[0]
    assert _train_probe(task, epochs=20) >= 0.99


def test_zero_separation_is_chance():
    task = gen_gaussian_clusters(1, 4, 8, 2000, 0.0, 0).tasks[0]
    assert abs(_train_probe(task, epochs=3) - 0.25) <= 0.05


def test_rotation_orthogonal(rng):
    r = rotation_matrix(9, 0.7, rng)
    assert np.max(np.abs(r @ r.T - np.eye(9))) <= 1e-10
    assert np.array_equal(rotation_matrix(9, 0.0, rng), np.eye(9))


def test_rotated_zero_angles_copy_features():
    base = gen_gaussian_clusters(1, 3, 6, 10, 2.0, 0)
    s = gen_rotated_features(base, [0.0, 0.0, 0.0], 5)
    s.check()
    for t, task in enumerate(s.tasks):
        assert np.array_equal(task.train_x, base.tasks[0].train_x)
        assert (task.class_start, task.class_stop) == (3 * t, 3 * t + 3)


def test_rotated_deterministic_and_rotates():
    base = gen_gaussian_clusters(1, 2, 6, 10, 2.0, 0)
    a = gen_rotated_features(base, [0.0, 0.5, 1.0], 3)
    assert a == gen_rotated_features(base, [0.0, 0.5, 1.0], 3)
    x0, x1 = base.tasks[0].train_x, a.tasks[1].train_x
    assert not np.allclose(x0, x1)
    assert np.allclose(np.linalg.norm(x0, axis=1), np.linalg.norm(x1, axis=1))


def test_rotated_rejects_nonfinite():
    base = gen_gaussian_clusters(1, 2, 4, 4, 1.0, 0)
    with pytest.raises(ValueError):
        gen_rotated_features(base, [float("nan")], 0)


def test_csv_minimal(tmp_path):
    p = tmp_path / "s.csv"
    p.write_text("0.5,1.5,0\n2.0,-1.0,1\n")
    s = load_csv_stream(p, CsvSchema({0: 0, 1: 0}))
    assert len(s) == 1 and s.dim == 2
    task = s.tasks[0]
    assert len(task.train_y) + len(task.test_y) == 2


def test_csv_header_skipped(tmp_path):
    p = tmp_path / "s.csv"
    p.write_text("a,b,label\n0.5,1.5,0\n")
    assert load_csv_stream(p, CsvSchema({0: 0}, header=True)).dim == 2


@pytest.mark.parametrize(
    "body, line, pattern",
    [
        ("1,2,0\n1,x,0\n", 2, "non-numeric"),
        ("1,2,0\n1,2,3,0\n", 2, "expected 2 features"),
        ("1,2,0\n1,2,9\n", 2, "unknown label"),
        ("1,2,0\n1,2,zero\n", 2, "not an integer"),
        ("1,nan,0\n", 1, "non-finite"),
    ],
)
def test_csv_errors_name_line(tmp_path, body, line, pattern):
    p = tmp_path / "bad.csv"
    p.write_text(body)
    with pytest.raises(CsvFormatError, match=pattern) as info:
        load_csv_stream(p, CsvSchema({0: 0, 1: 0}))
    assert info.value.line == line
    assert f":{line}:" in str(info.value)


def test_csv_noncontiguous_labels(tmp_path):
    p = tmp_path / "s.csv"
    p.write_text("1,0\n2,2\n")
    with pytest.raises(ValueError, match="contiguous"):
        load_csv_stream(p, CsvSchema({0: 0, 2: 1}))


def test_csv_round_trip(tmp_path):
    s = gen_gaussian_clusters(3, 2, 5, 12, 2.0, 4)
    schema = write_csv_stream(s, tmp_path / "s.csv", header=True)
    back = load_csv_stream(tmp_path / "s.csv", schema)
    assert back == s and back.digest() == s.digest()
