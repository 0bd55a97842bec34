"""Command-line entry point.

Exit codes: 0 success, 2 usage or configuration error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import __version__, checkpoint
from .checkpoint import FORMAT_VERSION
from .config import RunConfig, generator_from_dict, load_config, read_json
from .dataset import PreprocessSpec, load_csv, preprocess, save_csv
from .denoiser import DenoiserModel
from .errors import GexdiffError, InputError, InvalidConfig, NumericError
from .metrics import REPORT_SCHEMA_VERSION, evaluate, pca_project, write_pca_csv
from .sampler import SampleRequest, make_tau, sample
from .schedule import linear_schedule
from .synthdata import generate
from .trainer import train

log = logging.getLogger("gexdiff")

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 2, 3
BENCH_HEADER = "rate,kl,wasserstein,mmd,wallclock_s,denoiser_calls"


def _write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _sidecar(path: Path, suffix: str) -> Path:
    return path.with_name(path.stem + suffix)


def cmd_preprocess(args) -> None:
    matrix = load_csv(args.input, raw=True)
    spec, reduced = preprocess(matrix, args.top_k, args.negation)
    out = Path(args.output)
    save_csv(reduced, out)
    _write_json(_sidecar(out, ".genes.json"), {
        "top_k": spec.top_k, "negation": spec.negation,
        "selected_genes": spec.selected_gene_names, "skipped_genes": spec.skipped_genes,
    })
    log.info("kept %d of %d genes", reduced.n_genes, matrix.n_genes)


def _training_data(args, cfg: RunConfig):
    """Load ``--data`` and return (preprocess spec, zero-negated matrix)."""
    if args.raw:
        matrix = load_csv(args.data, raw=True)
        return preprocess(matrix, min(cfg.data.top_k, matrix.n_genes), cfg.data.negation)
    matrix = load_csv(args.data, raw=False)
    sidecar = _sidecar(Path(args.data), ".genes.json")
    top_k, negation = cfg.data.top_k, cfg.data.negation
    if sidecar.exists():
        meta = read_json(sidecar)
        top_k, negation = meta["top_k"], meta["negation"]
    spec = PreprocessSpec(top_k=top_k, negation=negation, selected_gene_names=list(matrix.gene_names))
    return spec, matrix


def cmd_train(args) -> None:
    cfg = load_config(args.config) if args.config else RunConfig()
    spec, matrix = _training_data(args, cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(cfg.to_json(), encoding="utf-8")
    s = linear_schedule(cfg.schedule.T, cfg.schedule.beta_start, cfg.schedule.beta_end)
    model = DenoiserModel(cfg.model.build(matrix.n_genes), s.T, seed=cfg.model.seed)
    res = train(model, matrix, s, cfg.train, out_dir=out, preprocess=spec)
    print(f"trained {cfg.train.epochs} epochs, final mean loss {res.loss_history[-1]:.6f}")


def _tau(method, steps, eta, mode, T):
    if method == "ddpm":
        return None
    return make_tau(T, steps, mode, eta)


def cmd_sample(args) -> None:
    if not 0.0 <= args.eta <= 1.0:
        raise InvalidConfig(f"--eta must lie in [0, 1], got {args.eta}")
    ck = checkpoint.load(args.checkpoint)
    T = ck.schedule.T
    steps = args.steps
    if args.method == "ddpm":
        if steps is not None:
            log.warning("--steps is ignored for ddpm sampling (all %d steps are used)", T)
        if args.eta != 0.0:
            log.warning("--eta is ignored for ddpm sampling")
    elif steps is None:
        steps = min(100, T)
    req = SampleRequest(args.n, args.method, _tau(args.method, steps, args.eta, args.tau_mode, T),
                        args.seed, postprocess=not args.no_postprocess, batch_size=args.batch_size)
    res = sample(ck.model, ck.schedule, req, gene_names=ck.gene_names)
    out = Path(args.out)
    save_csv(res.matrix, out)
    _write_json(_sidecar(out, ".json"), {
        "checkpoint_sha256": checkpoint.file_hash(args.checkpoint),
        "method": args.method,
        "tau": res.steps,
        "eta": args.eta if args.method == "ddim" else None,
        "seed": args.seed,
        "n_samples": args.n,
        "postprocess": req.postprocess,
        "wallclock_s": res.wallclock_s,
        "denoiser_calls": res.denoiser_calls,
    })
    print(f"wrote {args.n} samples to {out} ({res.denoiser_calls} denoiser calls)")


def cmd_evaluate(args) -> None:
    real = load_csv(args.real, raw=False)
    synth = load_csv(args.synth, raw=False)
    report = evaluate(real, synth, bins=args.bins,
                      bandwidth="auto" if args.bandwidth is None else args.bandwidth)
    Path(args.out).write_text(report.to_json(), encoding="utf-8")
    if args.per_gene_csv:
        report.write_per_gene_csv(args.per_gene_csv)
    if args.pca_csv:
        write_pca_csv(pca_project(real, synth), args.pca_csv)
    print(f"kl {report.kl:.6g}  wasserstein {report.wasserstein:.6g}  mmd {report.mmd:.6g}")


def cmd_schedule(args) -> None:
    s = linear_schedule(args.T, args.beta_start, args.beta_end)
    if args.out:
        Path(args.out).write_text(s.to_csv(), encoding="utf-8")
    else:
        sys.stdout.write(s.to_csv())


def cmd_synth(args) -> None:
    d = read_json(args.spec)
    if "generator" in d:
        d = d["generator"]
    spec = generator_from_dict(d)
    if args.seed is not None:
        spec.seed = args.seed
    out = Path(args.out)
    save_csv(generate(spec), out)
    _write_json(_sidecar(out, ".spec.json"), spec.to_dict())


def run_bench(cfg: RunConfig, out: Path) -> list[dict]:
    """Generate, train once, then sample and evaluate at each acceleration rate."""
    if cfg.generator is None:
        raise InvalidConfig("bench needs a 'generator' section")
    spec = generator_from_dict(cfg.generator)
    if spec.n_cells <= cfg.bench.holdout:
        raise InvalidConfig(f"generator makes {spec.n_cells} cells, not enough for a holdout of {cfg.bench.holdout}")
    T = cfg.schedule.T
    for r in cfg.bench.rates:
        if T % r:
            raise InvalidConfig(f"rate {r} does not divide T={T}")
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(cfg.to_json(), encoding="utf-8")
    data = generate(spec)
    save_csv(data, out / "data.csv")
    n_train = spec.n_cells - cfg.bench.holdout
    train_part = data.subset_cells(range(n_train))
    held = data.subset_cells(range(n_train, spec.n_cells))
    pre, negated = preprocess(train_part, min(cfg.data.top_k, spec.n_genes), cfg.data.negation)
    held = held.subset_genes(pre.selected_gene_indices)
    s = linear_schedule(T, cfg.schedule.beta_start, cfg.schedule.beta_end)
    model = DenoiserModel(cfg.model.build(negated.n_genes), T, seed=cfg.model.seed)
    train(model, negated, s, cfg.train, out_dir=out / "train", preprocess=pre)
    rows = []
    lines = [BENCH_HEADER]
    for rate in cfg.bench.rates:
        tau = make_tau(T, T // rate, "equidistant", cfg.sample.eta)
        req = SampleRequest(cfg.sample.n_samples, "ddim", tau, cfg.sample.seed,
                            batch_size=cfg.sample.batch_size)
        res = sample(model, s, req, gene_names=pre.selected_gene_names)
        save_csv(res.matrix, out / f"samples_rate{rate}.csv")
        rep = evaluate(held, res.matrix)
        (out / f"report_rate{rate}.json").write_text(rep.to_json(), encoding="utf-8")
        row = {"rate": rate, "kl": rep.kl, "wasserstein": rep.wasserstein, "mmd": rep.mmd,
               "wallclock_s": res.wallclock_s, "denoiser_calls": res.denoiser_calls}
        rows.append(row)
        lines.append(",".join(repr(row[k]) if isinstance(row[k], float) else str(row[k])
                              for k in BENCH_HEADER.split(",")))
        log.info("rate %d: mmd %.4g in %.2fs", rate, rep.mmd, res.wallclock_s)
    (out / "bench.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    return rows


def cmd_bench(args) -> None:
    rows = run_bench(load_config(args.config), Path(args.out))
    print(BENCH_HEADER)
    for r in rows:
        print(f"{r['rate']},{r['kl']:.4g},{r['wasserstein']:.4g},{r['mmd']:.4g},"
              f"{r['wallclock_s']:.3f},{r['denoiser_calls']}")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gexdiff", description="Diffusion model for expression matrices.")
    p.add_argument("--version", action="version",
                   version=f"gexdiff {__version__} (checkpoint format {FORMAT_VERSION}, "
                           f"report schema {REPORT_SCHEMA_VERSION})")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    q = sub.add_parser("preprocess", help="select hypervariable genes and zero-negate")
    q.add_argument("--input", required=True)
    q.add_argument("--output", required=True)
    q.add_argument("--top-k", type=int, default=2000)
    q.add_argument("--negation", type=float, default=-10.0)
    q.set_defaults(func=cmd_preprocess)

    q = sub.add_parser("train", help="train a denoiser")
    q.add_argument("--config")
    q.add_argument("--data", required=True)
    q.add_argument("--out", required=True)
    q.add_argument("--raw", action="store_true", help="data is raw; preprocess with the config's data section")
    q.set_defaults(func=cmd_train)

    q = sub.add_parser("sample", help="generate synthetic cells from a checkpoint")
    q.add_argument("--checkpoint", required=True)
    q.add_argument("--n", type=int, required=True)
    q.add_argument("--method", choices=["ddpm", "ddim"], default="ddim")
    q.add_argument("--steps", type=int)
    q.add_argument("--eta", type=float, default=0.0)
    q.add_argument("--tau-mode", choices=["equidistant", "quadratic"], default="equidistant")
    q.add_argument("--seed", type=int, default=0)
    q.add_argument("--batch-size", type=int, default=256)
    q.add_argument("--no-postprocess", action="store_true", help="keep negative values")
    q.add_argument("--out", required=True)
    q.set_defaults(func=cmd_sample)

    q = sub.add_parser("evaluate", help="compare synthetic against real cells")
    q.add_argument("--real", required=True)
    q.add_argument("--synth", required=True)
    q.add_argument("--out", required=True)
    q.add_argument("--bins", type=int, default=50)
    q.add_argument("--bandwidth", type=float)
    q.add_argument("--per-gene-csv")
    q.add_argument("--pca-csv")
    q.set_defaults(func=cmd_evaluate)

    q = sub.add_parser("schedule", help="dump the noise schedule table")
    q.add_argument("--T", type=int, default=1000)
    q.add_argument("--beta-start", type=float, default=1e-4)
    q.add_argument("--beta-end", type=float, default=0.02)
    q.add_argument("--out")
    q.set_defaults(func=cmd_schedule)

    q = sub.add_parser("synth", help="write a synthetic ground-truth dataset")
    q.add_argument("--spec", required=True, help="generator JSON, or a run config with a generator section")
    q.add_argument("--seed", type=int)
    q.add_argument("--out", required=True)
    q.set_defaults(func=cmd_synth)

    q = sub.add_parser("bench", help="acceleration study on synthetic data")
    q.add_argument("--config", required=True)
    q.add_argument("--out", required=True)
    q.set_defaults(func=cmd_bench)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s", stream=sys.stderr, force=True)
    try:
        args.func(args)
    except InputError as err:
        print(f"gexdiff: error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except FileNotFoundError as err:
        print(f"gexdiff: error: file not found: {err.filename}", file=sys.stderr)
        return EXIT_USAGE
    except (NumericError, FloatingPointError) as err:
        print(f"gexdiff: numeric failure: {err}", file=sys.stderr)
        return EXIT_NUMERIC
    except GexdiffError as err:
        print(f"gexdiff: failure: {err}", file=sys.stderr)
        return EXIT_NUMERIC
    except KeyError as err:
        print(f"gexdiff: error: missing field {err}", file=sys.stderr)
        return EXIT_USAGE
    except (ValueError, TypeError) as err:
        # malformed values inside otherwise valid JSON
        print(f"gexdiff: error: {err}", file=sys.stderr)
        return EXIT_USAGE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
