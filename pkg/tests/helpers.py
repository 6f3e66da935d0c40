"""Shared test constructions."""

import numpy as np

from backdoorlab.classifier import Model, linear_margin_radius
from backdoorlab.images import Image


def img(arr):
    return Image(np.asarray(arr, dtype=np.float32))


def margin_model_and_point(rng, d=12, K=3, hi=0.8, lo=0.2, bias=0.5):
    """Linear model plus a point whose sup-norm margin radius is certified
    comfortably above the trigger-plus-budget reach used in tests.

    Each class k owns one input coordinate; the point holds its own class
    coordinate at `hi`, everything else at `lo`, and the true class gets a
    bias head start. The analytic radius is (hi + bias - lo) / 2.
    """
    coords = rng.choice(d, size=K, replace=False)
    w = np.zeros((d, K))
    for k, c in enumerate(coords):
        w[c, k] = 1.0
    y = int(rng.integers(K))
    b = np.zeros(K)
    b[y] = bias
    x = np.full(d, lo, dtype=np.float64)
    x[coords[y]] = hi
    model = Model("linear", (1, d, 1), K, {"w": w, "b": b})
    point = img(x.reshape(1, d, 1))
    pred, radius = linear_margin_radius(model, point)
    assert pred == y and radius >= (hi + bias - lo) / 2 - 1e-6
    return model, point, y, radius


def additive_trigger(rng, shape, strength=0.2):
    """Random perturbation with its sup norm forced exactly onto `strength`."""
    d = int(np.prod(shape))
    trig = (rng.random(d) * 2 - 1) * strength
    trig[int(rng.integers(d))] = strength
    return trig.reshape(shape)
