"""Registered model laws, control laws and the two reference experiments."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import GaussianDensity, GaussianSumNoise, ModelSequence, RayleighNoise


def scalar_ltv_model(horizon, amplitude=0.9, rate=1e-4):
    """F[k] = amplitude * sin(rate * k), G[k] = cos(k), H[k] = 1."""
    def F(ks):
        return (amplitude * np.sin(rate * np.asarray(ks, float)))[:, None, None]

    def G(ks):
        return np.cos(np.asarray(ks, float))[:, None, None]

    return ModelSequence(horizon, F, G, np.ones((1, 1)))


def lti_2d_model(horizon):
    eye = np.eye(2)
    return ModelSequence(horizon, eye, eye, eye)


def constant_model(horizon, F, G, H):
    return ModelSequence.constant(F, G, H, horizon)


MODEL_LAWS = {
    "paper_scalar_ltv": scalar_ltv_model,
    "paper_lti_2d": lti_2d_model,
    "constant": constant_model,
}


def control_ones(horizon, nu):
    return np.ones((horizon, nu))


def control_zeros(horizon, nu):
    return np.zeros((horizon, nu))


def control_sincos(horizon, nu):
    k = np.arange(horizon, dtype=float)
    cols = [np.sin(k), np.cos(k)]
    return np.stack([cols[i % 2] for i in range(nu)], axis=1)


CONTROL_LAWS = {"ones": control_ones, "zeros": control_zeros, "sincos": control_sincos}


@dataclass(frozen=True)
class Experiment:
    model: ModelSequence
    x0: np.ndarray
    u: np.ndarray
    v_density: GaussianDensity
    w_true: object


def scalar_ltv_experiment(horizon=10**6):
    model = scalar_ltv_model(horizon)
    return Experiment(model, np.zeros(1), control_ones(horizon, 1),
                      GaussianDensity([0.0], [[1.0]]), RayleighNoise(2.0))


def gaussian_sum_2d():
    return GaussianSumNoise([0.5, 0.5], [[-2.0, 2.0], [2.0, -2.0]],
                            [[[4.0, 1.5], [1.5, 2.0]], [[1.0, 0.5], [0.5, 2.0]]])


def lti_2d_experiment(horizon=10**6):
    model = lti_2d_model(horizon)
    return Experiment(model, np.zeros(2), control_sincos(horizon, 2),
                      GaussianDensity([1.0, 1.0], [[2.0, -1.0], [-1.0, 2.0]]), gaussian_sum_2d())
