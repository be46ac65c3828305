"""Compare plausible-flip fractions of seeded audits with and without an erased class.

Both configurations are trained from scratch (unless ``--skip-train``) and
audited under the same seeds; the script counts the seeds on which the
erased-class run has the smaller fraction.
"""
from __future__ import annotations

from _common import CONFIGS, parser, prepare, save
from paretofact import pipeline


def fractions(cfg, seeds: int) -> list[float]:
    return [r.report.plausible_flip_fraction() for r in pipeline.seeded_audits(cfg, range(seeds))]


def main(argv=None) -> None:
    p = parser(__doc__.splitlines()[0], "erased.json")
    p.add_argument("--baseline", default=str(CONFIGS / "reference.json"), help="configuration without the erased class")
    p.add_argument("--baseline-out", help="output directory of the baseline run")
    args = p.parse_args(argv)
    erased_cfg = prepare(args.config, args.overrides, args.out, args.skip_train)
    base_cfg = prepare(args.baseline, args.overrides, args.baseline_out, args.skip_train)
    erased, base = fractions(erased_cfg, args.seeds), fractions(base_cfg, args.seeds)
    for seed, (b, e) in enumerate(zip(base, erased)):
        print(f"seed {seed}: baseline {b:.3f} erased {e:.3f}{'  decreased' if e < b else ''}")
    decreases = sum(e < b for b, e in zip(base, erased))
    print(f"decreased in {decreases}/{args.seeds} runs")
    save(erased_cfg, "erased_experiment.json", {"baseline": base, "erased": erased, "decreases": decreases})


if __name__ == "__main__":
    main()
