"""Train on the biased dataset and count the seeded audits whose mean |delta| peaks at the biased attribute.

With ``--sweep`` the count is repeated over several dataset and model seeds,
which shows how sensitive the outcome is to the particular training run.
"""
from __future__ import annotations

from _common import parser, prepare, save
from paretofact import pipeline


def bias_wins(cfg, seeds: int) -> tuple[int, list[list[float]], list[str]]:
    biased = cfg.bias_spec.attribute
    reports = [r.report for r in pipeline.seeded_audits(cfg, range(seeds))]
    deltas = [rep.mean_abs_delta() for rep in reports]
    wins = sum(all(d[biased] > d[j] for j in range(len(d)) if j != biased) for d in deltas)
    return wins, [d.tolist() for d in deltas], reports[0].attribute_names


def main(argv=None) -> None:
    p = parser(__doc__.splitlines()[0], "biased.json")
    p.add_argument("--sweep", action="store_true", help="also vary dataset.seed and model/train/target seeds")
    args = p.parse_args(argv)
    cfg = prepare(args.config, args.overrides, args.out, args.skip_train)
    wins, deltas, names = bias_wins(cfg, args.seeds)
    print("attributes: " + " ".join(names))
    for seed, d in enumerate(deltas):
        print(f"seed {seed}: mean |delta| " + " ".join(f"{v:.3f}" for v in d))
    print(f"biased attribute {cfg.bias_spec.attribute} largest in {wins}/{args.seeds} runs")
    doc = {"wins": wins, "mean_abs_delta": deltas, "attributes": names}

    if args.sweep:
        sweep = []
        for knob, values in (("dataset.seed", (7, 1)), ("model", (1, 2))):
            for v in values:
                if knob == "dataset.seed":
                    extra = [f"dataset.seed={v}"]
                else:
                    extra = [f"model.seed={v}", f"train.seed={v}", f"target.seed={v}"]
                tag = f"{knob.split('.')[0]}_seed_{v}"
                out = cfg.out_dir / "sweep" / tag
                sub = prepare(args.config, [*args.overrides, *extra], str(out), False)
                w, _, _ = bias_wins(sub, args.seeds)
                print(f"{tag}: {w}/{args.seeds}")
                sweep.append({"run": tag, "wins": w})
        doc["sweep"] = sweep
    save(cfg, "bias_experiment.json", doc)


if __name__ == "__main__":
    main()
