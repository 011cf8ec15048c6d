"""Command-line surface: simulate, cooccur, estimate, variance, infer, bench.

Exit codes: 0 success, 2 input error, 3 numerical failure, 4 I/O failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .bench import STUDIES, BenchSpec, run_bench
from .cooccur import merge, summarize_cohort
from .errors import FormatError, InputError, KnitError
from .fileio import (read_cohort, read_pmi, read_summary, read_summary_csv,
                     write_cohort, write_edges, write_pmi, write_summary,
                     write_summary_csv)
from .inference import KnitOptions, Sidedness, knit
from .simgen import (SimConfig, build_embeddings, sample_cohort,
                     sample_null_cohort, scaled_embeddings)
from .spectra import empirical_pmi, eig_sym, estimate_rank, estimate_rank_fixed_point, lowrank_pmi
from .variance import (NullCovarianceModel, PatientResiduals, clamp_count,
                       cov_rows_patient, reset_clamp_count,
                       var_lowrank_entry, var_lowrank_entry_null)


def _threads_default() -> int:
    env = os.environ.get("KNIT_THREADS", "")
    try:
        return max(1, int(env)) if env else 1
    except ValueError:
        return 1


def _load_sim_config(path: str, seed_override: int | None) -> tuple[SimConfig, dict]:
    try:
        raw = json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise FormatError(f"config {path} is not valid JSON: {e}") from e
    known = {"d", "p", "n", "T", "q", "seed", "kappa_exponent", "mc_samples",
             "process", "alpha", "sphere_step"}
    extra = {k: v for k, v in raw.items() if k not in known}
    kwargs = {k: v for k, v in raw.items() if k in known}
    if seed_override is not None:
        kwargs["seed"] = seed_override
    if "seed" not in kwargs:
        raise InputError("config must set a seed (or pass --seed)")
    try:
        cfg = SimConfig(**kwargs).validate()
    except TypeError as e:
        raise InputError(f"bad config: {e}") from e
    return cfg, extra


def _cmd_simulate(args) -> int:
    cfg, extra = _load_sim_config(args.config, args.seed)
    if extra.get("global_null"):
        p_vec = np.asarray(extra.get("p_vec", np.full(cfg.d, 1.0 / cfg.d)), dtype=float)
        cohort = sample_null_cohort(p_vec, cfg.n, cfg.T, cfg.seed, q=cfg.q)
    else:
        emb = scaled_embeddings(cfg) if cfg.kappa_exponent is not None else build_embeddings(cfg)
        cohort = sample_cohort(emb, cfg)
    write_cohort(args.out, cohort)
    if args.verbose:
        print(f"wrote {cohort.n} sequences (d={cohort.d}) to {args.out}", file=sys.stderr)
    return 0


def _cmd_cooccur(args) -> int:
    cohort = read_cohort(args.infile)
    q = args.q if args.q is not None else (cohort.q or 30)
    summary = summarize_cohort(cohort, q).validate()
    if args.format == "csv":
        write_summary_csv(args.out, summary)
    else:
        write_summary(args.out, summary)
    if args.verbose:
        print(f"summary: d={summary.d} n={summary.n} q={summary.q} "
              f"total={summary.total()}", file=sys.stderr)
    return 0


def _read_any_summary(path: str):
    if str(path).endswith(".csv"):
        return read_summary_csv(path)
    return read_summary(path)


def _cmd_estimate(args) -> int:
    summary = _read_any_summary(args.summary)
    pmi_hat = empirical_pmi(summary, eta=args.pmi_floor)
    if args.rank is not None:
        rank = args.rank
        eta0 = None
    elif args.auto_rank:
        lam, _ = eig_sym(pmi_hat.matrix)
        if args.eta0 is not None:
            rank, eta0 = estimate_rank(lam, args.eta0), args.eta0
        else:
            rank, eta0, _ = estimate_rank_fixed_point(lam, summary.d, summary.n,
                                                      summary.T_bar)
        if rank < 1:
            raise InputError(f"estimated rank 0 at eta0={eta0:.4g}; pass --rank")
    else:
        raise InputError("pass --rank or --auto-rank")
    tilde = lowrank_pmi(pmi_hat, rank)
    meta = {"d": summary.d, "p": rank, "q": summary.q, "n": summary.n,
            "T": summary.T_bar, "eta": args.pmi_floor, "eta0": eta0}
    write_pmi(args.out, tilde, meta)
    if args.verbose:
        print(f"rank-{rank} estimate written to {args.out}", file=sys.stderr)
    return 0


def _read_pairs(path: str) -> np.ndarray:
    pairs = []
    with open(path, "r", encoding="ascii") as fh:
        header = fh.readline().strip()
        if header not in ("w,w_prime", "w,w'"):
            raise FormatError(f"pairs file must start with 'w,w_prime', got {header!r}")
        for line in fh:
            line = line.strip()
            if not line:
                continue
            a, b = line.split(",")
            pairs.append((int(a), int(b)))
    if not pairs:
        raise InputError("pairs file is empty")
    return np.asarray(pairs, dtype=int)


def _cmd_variance(args) -> int:
    summary = _read_any_summary(args.summary)
    estimate, _meta = read_pmi(args.pmi)
    pairs = _read_pairs(args.pairs)
    reset_clamp_count()
    dense = summary.dense()
    rows_out = []
    excluded = []
    if args.patient_dir:
        files = sorted(Path(args.patient_dir).glob("*.knc"))
        if len(files) != summary.n:
            raise InputError(f"--patient-dir holds {len(files)} files, summary has n={summary.n}")
        singles = [read_summary(f) for f in files]
        patients = []
        for s in singles:
            if s.n != 1 or s.d != summary.d or s.q != summary.q:
                raise InputError("patient files must be single-patient summaries matching d and q")
            from .cooccur import PatientCooccurrence
            patients.append(PatientCooccurrence(d=s.d, q=s.q, T_i=int(s.lengths[0]),
                                                rows=s.rows, cols=s.cols, counts=s.counts))
        residuals = PatientResiduals(patients=patients, summary=summary)
        blocks: dict[tuple[int, int], np.ndarray] = {}

        def provider(a: int, b: int) -> np.ndarray:
            key = (a, b)
            if key not in blocks:
                blocks[key] = cov_rows_patient(a, b, residuals)
            return blocks[key]

        for w, w2 in pairs:
            if dense[w, w2] == 0:
                excluded.append((w, w2, "zero co-occurrence"))
                continue
            v = var_lowrank_entry(estimate.projector_row, provider, int(w), int(w2))
            rows_out.append((w, w2, v, "patient"))
    else:
        model = NullCovarianceModel.from_summary(summary)
        for w, w2 in pairs:
            if dense[w, w2] == 0:
                excluded.append((w, w2, "zero co-occurrence"))
                continue
            v = var_lowrank_entry_null(estimate.eigenvectors, model, int(w), int(w2))
            rows_out.append((w, w2, v, "null"))
    with open(args.out, "w", encoding="ascii", newline="\n") as fh:
        fh.write("w,w_prime,variance,path\n")
        for w, w2, v, pth in rows_out:
            fh.write(f"{w},{w2},{float(v)!r},{pth}\n")
    sidecar = {"excluded": [[int(a), int(b), why] for a, b, why in excluded],
               "negative_clamps": clamp_count()}
    Path(args.out + ".meta.json").write_text(json.dumps(sidecar, sort_keys=True) + "\n")
    if args.verbose:
        print(f"{len(rows_out)} variances written; {len(excluded)} pairs excluded; "
              f"{clamp_count()} negative clamps", file=sys.stderr)
    return 0


def _cmd_infer(args) -> int:
    if args.from_config:
        cfg, extra = _load_sim_config(args.from_config, args.seed)
        if extra.get("global_null"):
            p_vec = np.asarray(extra.get("p_vec", np.full(cfg.d, 1.0 / cfg.d)), dtype=float)
            cohort = sample_null_cohort(p_vec, cfg.n, cfg.T, cfg.seed, q=cfg.q)
        else:
            emb = scaled_embeddings(cfg) if cfg.kappa_exponent is not None else build_embeddings(cfg)
            cohort = sample_cohort(emb, cfg)
        summary = summarize_cohort(cohort, cfg.q)
        config_record = {"from_config": args.from_config, "sim": json.loads(Path(args.from_config).read_text())}
    elif args.summary:
        summary = _read_any_summary(args.summary)
        config_record = {"summary": str(args.summary)}
    else:
        raise InputError("pass --summary or --from-config")
    opt = KnitOptions(
        alpha=args.fdr,
        rank=args.rank,
        eta0=args.eta0,
        pmi_floor=args.pmi_floor,
        sidedness=Sidedness.PAPER_LITERAL if args.paper_literal_p else Sidedness.TWO_SIDED,
        use_fwer=args.fwer,
    )
    result, estimate = knit(summary, opt)
    config_record.update({"fdr": args.fdr, "rank": result and estimate.rank,
                          "fwer": args.fwer, "paper_literal_p": args.paper_literal_p,
                          "pmi_floor": args.pmi_floor, "seed": args.seed,
                          "version": __version__})
    write_edges(args.out, result, config_record)
    if args.verbose:
        print(f"J={result.J} j_max={result.j_max} selected={int(result.selected.sum())} "
              f"excluded={len(result.excluded)}", file=sys.stderr)
    return 0


def _cmd_bench(args) -> int:
    overrides = {}
    for item in args.override or []:
        if "=" not in item:
            raise InputError(f"bad --override {item!r}; expected key=value")
        key, val = item.split("=", 1)
        try:
            overrides[key] = json.loads(val)
        except json.JSONDecodeError:
            overrides[key] = val
    spec = BenchSpec(study=args.study, out_dir=args.out_dir, seed=args.seed or 0,
                     replicates=args.replicates, threads=args.threads,
                     paper_scale=args.paper_scale, overrides=overrides)
    manifest = run_bench(spec)
    if args.verbose:
        print(json.dumps(manifest, indent=2, sort_keys=True), file=sys.stderr)
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="knit",
                                 description="knowledge-graph inference from "
                                             "windowed co-occurrence summaries")
    ap.add_argument("--version", action="version", version=f"knit {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="master seed")
    common.add_argument("--threads", type=int, default=_threads_default(),
                        help="worker pool size (env KNIT_THREADS)")
    common.add_argument("--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", parents=[common], help="generate a synthetic cohort")
    s.add_argument("--config", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(fn=_cmd_simulate)

    s = sub.add_parser("cooccur", parents=[common], help="build the co-occurrence summary")
    s.add_argument("--in", dest="infile", required=True)
    s.add_argument("--q", type=int, default=None, help="window size (default 30)")
    s.add_argument("--out", required=True)
    s.add_argument("--format", choices=["binary", "csv"], default="binary")
    s.set_defaults(fn=_cmd_cooccur)

    s = sub.add_parser("estimate", parents=[common], help="PMI estimation")
    s.add_argument("--summary", required=True)
    s.add_argument("--rank", type=int, default=None)
    s.add_argument("--auto-rank", action="store_true")
    s.add_argument("--eta0", type=float, default=None)
    s.add_argument("--pmi-floor", type=float, default=1e-6)
    s.add_argument("--out", required=True)
    s.set_defaults(fn=_cmd_estimate)

    s = sub.add_parser("variance", parents=[common], help="entrywise variances")
    s.add_argument("--pmi", required=True)
    s.add_argument("--summary", required=True)
    s.add_argument("--patient-dir", default=None)
    s.add_argument("--pairs", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(fn=_cmd_variance)

    s = sub.add_parser("infer", parents=[common], help="edge testing (the full procedure)")
    s.add_argument("--summary", default=None)
    s.add_argument("--from-config", default=None)
    s.add_argument("--rank", type=int, default=None)
    s.add_argument("--eta0", type=float, default=None)
    s.add_argument("--fdr", type=float, default=0.05)
    s.add_argument("--fwer", action="store_true")
    s.add_argument("--paper-literal-p", action="store_true")
    s.add_argument("--pmi-floor", type=float, default=1e-6)
    s.add_argument("--out", required=True)
    s.set_defaults(fn=_cmd_infer)

    s = sub.add_parser("bench", parents=[common], help="simulation studies")
    s.add_argument("--study", required=True, choices=STUDIES)
    s.add_argument("--out-dir", required=True)
    s.add_argument("--replicates", type=int, default=None)
    s.add_argument("--paper-scale", action="store_true")
    s.add_argument("--override", action="append", default=None,
                   help="key=value study-config override (repeatable)")
    s.set_defaults(fn=_cmd_bench)
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except KnitError as e:
        print(f"knit: error: {e}", file=sys.stderr)
        return e.exit_code
    except OSError as e:
        print(f"knit: i/o error: {e}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
