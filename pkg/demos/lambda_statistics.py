"""Second moment of the noise dual maximum against the extreme-value formulas.

Run: ``python3 demos/lambda_statistics.py``
"""

from __future__ import annotations

from lassodoa.experiments import ExperimentConfig, lambda_moment_rows


def main() -> None:
    cfg = ExperimentConfig(lambda_ms=(32, 64, 128, 256, 512), lambda_trials=1000, seed=3)
    print("    m   continuous  sampled   ln m + 0.5772   ln m + 1.3")
    for r in lambda_moment_rows(cfg):
        print(
            f"{r['m']:5d}   {r['E_lambda_sq_norm']:9.4f}  {r['E_lambda_sq_sampled_norm']:8.4f}"
            f"   {r['theory_norm_gumbel']:12.4f}   {r['theory_norm_empirical']:9.4f}"
        )


if __name__ == "__main__":
    main()
