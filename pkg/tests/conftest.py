import numpy as np
import pytest

from vpre.tensor import Tensor, Tape


def fd_gradient(f, x: np.ndarray, h: float = 1e-5, coords=None) -> np.ndarray:
    """Central finite differences of scalar f at x (float64).

    Independent of the tape: f is called with plain arrays. If `coords`
    is given, only those flat indices are evaluated (the rest stay 0).
    """
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = g.reshape(-1)
    idxs = range(flat.size) if coords is None else coords
    for i in idxs:
        orig = flat[i]
        flat[i] = orig + h
        fp = f(x)
        flat[i] = orig - h
        fm = f(x)
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * h)
    return g


def rel_err(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = max(1.0, float(np.max(np.abs(a))), float(np.max(np.abs(b))))
    return float(np.max(np.abs(a - b))) / denom


def check_op_gradients(build, arrays: dict[str, np.ndarray], tol: float = 1e-4,
                       h: float = 1e-5, max_coords: int = 24, rng=None):
    """Compare tape gradients of `build` against finite differences.

    `build` maps {name: Tensor} -> scalar Tensor. Each input is perturbed
    on a random subset of coordinates (all, if small).
    """
    rng = rng or np.random.default_rng(0)
    tensors = {k: Tensor(np.asarray(v, dtype=np.float64), requires_grad=True)
               for k, v in arrays.items()}
    with Tape() as tape:
        loss = build(tensors)
    grads = tape.gradients(loss)
    for name, t in tensors.items():
        coords = None
        if t.size > max_coords:
            coords = sorted(rng.choice(t.size, size=max_coords, replace=False).tolist())

        def f(x, _name=name):
            vals = {k: (x if k == _name else tensors[k].data) for k in tensors}
            fresh = {k: Tensor(v.copy(), requires_grad=False) for k, v in vals.items()}
            return float(build(fresh).data)

        fd = fd_gradient(f, t.data, h=h, coords=coords)
        an = grads.get(t)
        if coords is not None:
            mask = np.zeros(t.size, dtype=bool)
            mask[list(coords)] = True
            an = np.where(mask.reshape(t.shape), an, 0.0)
        err = rel_err(an, fd)
        assert err < tol, f"gradient mismatch for {name}: rel err {err:.3e}"


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def tiny_world():
    """Small trained setup shared by rank/gan/designer/service tests:
    16px corpus, tiny extractor, tiny GAN, proxy classifier."""
    from vpre.corpus import split_leave_one_out
    from vpre.evalmetrics import ClassifierConfig, train_classifier
    from vpre.gan import GanConfig, train_gan
    from vpre.rank import RankConfig, train
    from vpre.synth import SyntheticStyleSpec, generate_synthetic

    spec = SyntheticStyleSpec(image_side=16)
    corpus = split_leave_one_out(generate_synthetic(spec, 12, 30, seed=2), seed=0)
    clf, _ = train_classifier(corpus, ClassifierConfig(epochs=6, feature_dim=16, seed=0))
    rank_result = train(RankConfig(model="dvbpr", epochs=4, latent_dim=8,
                                   cnn_preset="tiny", cnn_input_side=32,
                                   batch_size=32, seed=0), corpus)
    gan_result = train_gan(corpus, GanConfig(image_side=16, epochs=4, batch_size=8,
                                             base_channels=8, seed=0))
    return {"corpus": corpus, "classifier": clf, "dvbpr": rank_result.model,
            "gan": gan_result.pair, "gan_history": gan_result.history,
            "gan_holdout": gan_result.holdout_indices}
