"""
Resampling a control pool into in-silico trials
===============================================

Builds the bundled synthetic multi-study fixture, carves an in-silico
RCT out of the largest control pool, spikes a treatment effect into the
treated arm, and measures power over a small grid of trial sizes.

The fixture mimics a registry extract: one large phase-3 control pool
that plays the trial source, plus three external studies of very
different sizes that are held fixed while the trial is re-drawn.
"""
import tempfile

from ecborrow import (
    ResampleConfig,
    load_manifest_data,
    run_resampling_study,
    synth_data,
    true_tau_resample,
)

GRID = (60, 90, 120)
SPIKE = 0.375
REPS = 150


def main():
    with tempfile.TemporaryDirectory() as td:
        manifest = synth_data(td, seed=11)
        for s in manifest.studies:
            print(f"  {s.label:14s} {s.size:4d} patients  ({s.role})")
        source, externals, names = load_manifest_data(manifest)

    tau = true_tau_resample(source, SPIKE)
    print(f"\nspiked effect: responder probability +{SPIKE} among treated"
          f" non-responders, true risk difference {tau:.3f}")

    cfg = ResampleConfig(n1_grid=GRID, ratio_r=2, spike_prob=SPIKE, reps=REPS, seed=3)
    rows = run_resampling_study(source, externals, names, cfg,
                                methods=("ZPROP", "RE"))
    by = {(int(r.key), r.method, r.effect): r for r in rows}

    print(f"\n{'n1':>4s}  {'ZPROP power':>12s}  {'RE power':>12s}"
          f"  {'ZPROP type I':>13s}  {'RE type I':>13s}")
    for n1 in GRID:
        print(f"{n1:4d}"
              f"  {by[(n1, 'ZPROP', 'positive')].rejection_rate:12.3f}"
              f"  {by[(n1, 'RE', 'positive')].rejection_rate:12.3f}"
              f"  {by[(n1, 'ZPROP', 'null')].rejection_rate:13.3f}"
              f"  {by[(n1, 'RE', 'null')].rejection_rate:13.3f}")
    print(f"\n({REPS} replicates per cell; the borrowed analysis reaches"
          " useful power with a visibly smaller trial)")


if __name__ == "__main__":
    main()
