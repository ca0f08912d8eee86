"""Resolve two closely spaced sources with the certified continuous LASSO.

Run: ``python3 demos/resolve_pair.py``
"""

from __future__ import annotations

import numpy as np

from lassodoa.baselines import cbf_estimate, nlls_ml_estimate
from lassodoa.class_estimator import solve_class_for_order
from lassodoa.manifold import NoiseModel, SparseRepresentation, UlaManifold
from lassodoa.perturbation import build_expansion
from lassodoa.performance import extreme_value_moments, predict_performance


def main() -> None:
    m, sigma = 15, 1e-2
    man = UlaManifold(m)
    truth = SparseRepresentation([0.3, 0.3 + 4 * np.pi / m], [1.0, 1.0])
    noise = NoiseModel(sigma, seed=1)
    X = truth.synthesize(man) + noise.draw(m, 1)

    found = solve_class_for_order(X, man, 2)
    sol = found.solution
    print(f"true positions      {truth.thetas}")
    print(f"CLASS positions     {sol.thetas}  (lambda = {sol.lam:.4g}, certified = {sol.certificate.passed})")
    print(f"ML positions        {nlls_ml_estimate(X, man, 2).thetas}")
    print(f"beamformer peaks    {cbf_estimate(X, man, 2).thetas}")

    exp = build_expansion(man, truth)
    pred = predict_performance(exp, noise, extreme_value_moments(m, 1, sigma))
    print(f"predicted bias      {pred.bias}")
    print(f"predicted std       {np.sqrt(pred.variance)}")


if __name__ == "__main__":
    main()
