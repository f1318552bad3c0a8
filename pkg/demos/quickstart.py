"""Minimal end-to-end run: simulate, hide, train, score against baselines.

Takes well under a minute on a laptop. The model is deliberately small;
see the README for the configurations used in the acceptance benchmarks.
"""

import numpy as np

from stimpute import (
    FieldSpec,
    ModelConfig,
    Rng,
    TrainConfig,
    augment_missing_indicators,
    baseline_linear_interpolation,
    baseline_monthly_mean,
    evaluate_model,
    mcar_split,
    normalize,
    synth_field,
    train,
)
from stimpute.dataio import replace_preserving


def main():
    base = synth_field(FieldSpec(
        height=16, width=16, length=96, phi=0.8, ell=3.0, beta=0.8,
        sigma=0.1, n_noise_covariates=2, seed=0,
    ))
    dataset = augment_missing_indicators(base)
    print(f"simulated grid: {base.height}x{base.width}, {base.n_times} steps, "
          f"{dataset.n_features} covariate channels after indicators")

    split = mcar_split(dataset.M, 0.2, Rng(42))
    print(f"hid {len(split.eval_points)} observations for validation")

    masked = replace_preserving(
        dataset, Y=dataset.Y * split.m_cond, M=split.m_cond.copy()
    )
    view, stats = normalize(masked)

    config = ModelConfig(
        d_in=view.n_features, c=16, n_layers=2, temporal_heads=2,
        spatial_heads=2, sw_schedule=((4, 4, 0), (4, 4, 2)), mlp_hidden=64,
    )
    tcfg = TrainConfig(
        epochs=15, batch_size=1, window_length=48, window_stride=48,
        tile=8, seed=0, grad_clip=1.0,
    )
    params, history = train(view, config, tcfg, log=lambda r: print(
        f"  epoch {r['epoch']:2d}  loss {r['loss']:.4f}  lr {r['lr']:.2e}"
    ))

    report = evaluate_model(
        dataset, split, params, config, stats=stats,
        length=48, stride=48, tile=8,
    )
    interp = baseline_linear_interpolation(dataset, split)
    monthly = baseline_monthly_mean(dataset, split)

    print()
    print(f"{'method':<22} {'MAE':>9} {'MRE %':>8}")
    for name, rep in [
        ("transformer", report),
        ("linear interpolation", interp),
        ("monthly mean", monthly),
    ]:
        print(f"{name:<22} {rep.mae:>9.5f} {rep.mre_percent:>8.2f}")


if __name__ == "__main__":
    main()
