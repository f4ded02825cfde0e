"""Command-line front end.

Exit codes: 0 success, 2 parse or usage error, 3 dimension mismatch,
4 numeric failure.
"""

import argparse
import os
import sys

from shift_audit import bounds, synthetic, trainer
from shift_audit.divergence import (
    Kernel,
    check_eps,
    default_epsilon,
    fit_plugin,
    hinge_support_divergence_empirical,
    kernel_support_divergence,
    mmd_squared,
    mmd_squared_cells,
    support_divergence_empirical,
    support_divergence_exact,
)
from shift_audit.files import (
    DimensionMismatch,
    ParseError,
    RunManifest,
    atomic_write,
    dumps,
    read_json,
    read_samples,
    require_same_dim,
    samples_csv,
    write_json,
)
from shift_audit.hypotheses import (
    Hypothesis,
    HypothesisClass,
    Predictor,
    Representation,
    hypothesis_from_dict,
    risk,
    theorem1_bound,
)

EXIT_PARSE, EXIT_DIM, EXIT_NUMERIC = 2, 3, 4
LABELSHIFT_REMOVAL_ORDER = (1, 3, 5, 7, 9)


def _floats(text):
    return [float(v) for v in text.split(",") if v.strip()]


def _ints(text):
    return [int(v) for v in text.split(",") if v.strip()]


def _emit(doc, out):
    text = dumps(doc)
    if out:
        atomic_write(out, text)
    else:
        sys.stdout.write(text)


def _kernel(args, *samples):
    if args.kernel_sigma in (None, "median"):
        return Kernel.median_heuristic(*samples)
    return Kernel(float(args.kernel_sigma))


def _bandwidth(text):
    return text if text == "silverman" else float(text)


# ---------------------------------------------------------------------------
# commands


def cmd_generate(args):
    if args.scenario == "example1":
        problem = synthetic.make_example1(args.resolution or 200)
    elif args.scenario in ("overlap-a", "overlap-b"):
        kw = {"resolution": args.resolution} if args.resolution else {}
        a, b = synthetic.make_overlap_pair(**kw)
        problem = a if args.scenario == "overlap-a" else b
    else:
        problem = synthetic.make_label_shift(synthetic.make_cluster_base(), _ints(args.removed or ""))
    write_json(args.out, {"problem": problem.to_dict()})
    return 0


def _load_problem(path):
    doc = read_json(path)
    return synthetic.problem_from_dict(doc.get("problem", doc))


def cmd_sample(args):
    problem = _load_problem(args.problem)
    s = synthetic.sample(problem, args.domain, args.n, args.seed, with_labels=args.labels)
    atomic_write(args.out, samples_csv(s))
    return 0


def cmd_diagnose(args):
    src, tgt = read_samples(args.source), read_samples(args.target)
    require_same_dim(src, tgt)
    p_hat, q_hat = fit_plugin(src.points, tgt.points, args.estimator, _bandwidth(args.bandwidth), args.bins)
    if args.eps is not None:
        eps = check_eps(args.eps)
    else:
        eps = check_eps(default_epsilon(p_hat, src.points, q=args.eps_quantile))
    kernel = _kernel(args, src.points, tgt.points)
    pair = (src.points, tgt.points)
    report = {
        "epsilon": eps,
        "n_source": src.n,
        "n_target": tgt.n,
        "d_supp": support_divergence_empirical(*pair, eps, densities=(p_hat, q_hat)).to_dict(),
        "kernel_support": kernel_support_divergence(*pair, p_hat, eps, kernel).to_dict(),
        "mmd_squared_v": mmd_squared(*pair, kernel, "V").to_dict(),
        "mmd_squared_u": mmd_squared(*pair, kernel, "U").to_dict(),
        "hinge_support": hinge_support_divergence_empirical(*pair, eps, (p_hat, q_hat)).to_dict(),
    }
    config = {"eps": args.eps, "eps_quantile": args.eps_quantile, "kernel_sigma": kernel.sigma,
              "estimator": args.estimator, "bandwidth": args.bandwidth, "bins": args.bins}
    manifest = RunManifest.for_inputs("diagnose", [args.source, args.target], config)
    _emit({"report": report, "manifest": manifest.to_dict()}, args.out)
    return 0


def cmd_bound(args):
    src, tgt = read_samples(args.source), read_samples(args.target)
    require_same_dim(src, tgt)
    if not src.labeled:
        raise ValueError(f"{args.source}: source samples need a y column")
    h = hypothesis_from_dict(read_json(args.model))
    h.check_dim(src.dim)
    problem = None if args.eta == "unobservable" else _load_problem(args.eta)
    if problem is not None and problem.dim != src.dim:
        raise DimensionMismatch(f"problem has {problem.dim} dimensions, samples have {src.dim}")
    rep, pred = h.representation, h.predictor
    if args.theorem == 1:
        if problem is None:
            raise ValueError("theorem 1 needs the problem file (its lambda term uses target labels)")
        zbox = bounds.induce(problem, rep).source.box
        report = theorem1_bound(h, HypothesisClass.thresholds(rep, zbox), problem).to_dict()
    else:
        eta = None
        if problem is not None:
            try:
                eta = bounds.eta_excess_loss(problem, rep, pred).eta
            except bounds.EtaUnavailable:
                eta = None
        if args.exact:
            if problem is None:
                raise ValueError("--exact needs the problem file")
            eta_arg = bounds.UNOBSERVABLE if eta is None else eta
            if args.theorem == 2:
                r = bounds.theorem2_bound(problem, rep, pred, eps=args.eps, eta=eta_arg)
            else:
                r = bounds.theorem3_bound(problem, rep, pred, eps=args.eps, eta=eta_arg,
                                          kernel=Kernel(float(args.kernel_sigma or 1.0)),
                                          norm_bound=args.norm_bound)
        elif args.theorem == 2:
            r = bounds.theorem2_bound_from_samples(src, tgt, h, eps=args.eps, eta=eta)
        else:
            zs, zt = rep.apply(src.points), rep.apply(tgt.points)
            r = bounds.theorem3_bound_from_samples(src, tgt, h, eps=args.eps, eta=eta,
                                                   kernel=_kernel(args, zs, zt),
                                                   norm_bound=args.norm_bound)
        report = r.to_dict()
    config = {"theorem": args.theorem, "eps": args.eps, "eta": args.eta, "exact": args.exact,
              "kernel_sigma": args.kernel_sigma, "norm_bound": args.norm_bound}
    paths = [args.source, args.target, args.model] + ([args.eta] if problem is not None else [])
    manifest = RunManifest.for_inputs("bound", paths, config)
    _emit({"report": report, "manifest": manifest.to_dict()}, args.out)
    return 0


def _replicate_example1(args):
    problem = synthetic.make_example1(args.resolution or 200)
    hyps = [
        Hypothesis(Representation.select(0), Predictor.threshold(0.0, orientation=-1)),
        Hypothesis(Representation.select(1), Predictor.threshold(0.0)),
    ]
    rows = bounds.compare_bounds(problem, hyps, args.eps or [0.2], args.sweep or [1.0],
                                 names=["phi1", "phi2"])
    return {"compare_bounds.csv": bounds.rows_to_csv(rows)}, {"rows": rows}


OVERLAP_COLUMNS = ["sigma", "epsilon", "mmd_squared_a", "mmd_squared_b", "d_supp_a", "d_supp_b"]


def _replicate_overlap(args):
    kw = {"resolution": args.resolution} if args.resolution else {}
    a, b = synthetic.make_overlap_pair(**kw)
    sigmas = args.sweep or [0.05, 0.1, 0.25, 0.5, 1.0, 2.0]
    rows = []
    for eps in args.eps or [synthetic.OVERLAP_DEFAULTS["recorded_eps"]]:
        da = support_divergence_exact(a.source, a.target, eps).value
        db = support_divergence_exact(b.source, b.target, eps).value
        for s in sigmas:
            k = Kernel(s)
            rows.append({"sigma": s, "epsilon": eps,
                         "mmd_squared_a": mmd_squared_cells(a.source, a.target, k).value,
                         "mmd_squared_b": mmd_squared_cells(b.source, b.target, k).value,
                         "d_supp_a": da, "d_supp_b": db})
    summary = {"rows": rows, "descriptor": a.descriptor,
               "mmd_a_exceeds_b_at": [r["sigma"] for r in rows if r["mmd_squared_a"] > r["mmd_squared_b"]]}
    return {"overlap_sweep.csv": bounds.rows_to_csv(rows, OVERLAP_COLUMNS)}, summary


LABELSHIFT_COLUMNS = ["n_removed", "alpha", "seed", "source_risk", "target_risk", "final_objective"]


def _replicate_labelshift(args):
    if args.seed is None:
        raise ValueError("labelshift replication is randomized; pass --seed")
    base = synthetic.make_cluster_base()
    alphas = args.sweep or [0.0, 0.3, 0.5, 0.6]
    seeds = [args.seed + i for i in range(args.seeds)]
    rows = []
    for n_removed in _ints(args.removed or "0,1,3,5"):
        problem = synthetic.make_label_shift(base, LABELSHIFT_REMOVAL_ORDER[:n_removed])
        for alpha in alphas:
            for seed in seeds:
                s = synthetic.sample(problem, "source", args.n, seed)
                t = synthetic.sample(problem, "target", args.n, seed)
                m = trainer.train(s, t, trainer.TrainConfig(alpha=alpha, seed=seed))
                rows.append({"n_removed": n_removed, "alpha": alpha, "seed": seed,
                             "source_risk": risk(m.hypothesis, problem, "source"),
                             "target_risk": risk(m.hypothesis, problem, "target"),
                             "final_objective": m.final_objective})
    summary = {"rows": rows, "removal_order": list(LABELSHIFT_REMOVAL_ORDER)}
    return {"labelshift_sweep.csv": bounds.rows_to_csv(rows, LABELSHIFT_COLUMNS)}, summary


def cmd_replicate(args):
    run = {"example1": _replicate_example1, "overlap": _replicate_overlap,
           "labelshift": _replicate_labelshift}[args.scenario]
    tables, summary = run(args)
    os.makedirs(args.out, exist_ok=True)
    for name, text in tables.items():
        atomic_write(os.path.join(args.out, name), text)
    config = {k: getattr(args, k) for k in ("scenario", "eps", "sweep", "seed", "seeds", "n",
                                            "removed", "resolution")}
    manifest = RunManifest("replicate", {}, config)
    write_json(os.path.join(args.out, "summary.json"),
               {"scenario": args.scenario, **summary, "manifest": manifest.to_dict()})
    return 0


def cmd_train(args):
    src, tgt = read_samples(args.source), read_samples(args.target)
    require_same_dim(src, tgt)
    config = trainer.TrainConfig(
        alpha=args.alpha, penalty=args.penalty, kernel=Kernel(args.kernel_sigma), eps=args.eps,
        learning_rate=args.learning_rate, max_iters=args.max_iters, seed=args.seed, k=args.k,
    )
    model = trainer.train(src, tgt, config)
    paths = [args.source, args.target]
    if args.tune_on_target:
        tuned = read_samples(args.tune_on_target)
        require_same_dim(src, tuned)
        model = trainer.tune_on_target(model, tuned)
        paths.append(args.tune_on_target)
    manifest = RunManifest.for_inputs("train", paths, config.to_dict())
    write_json(args.out_model, {**model.to_dict(), "manifest": manifest.to_dict()})
    if args.out_trace:
        atomic_write(args.out_trace, model.trace_csv())
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser():
    ap = argparse.ArgumentParser(prog="shift-audit", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a synthetic problem as JSON")
    g.add_argument("scenario", choices=["example1", "overlap-a", "overlap-b", "labelshift"])
    g.add_argument("--out", required=True)
    g.add_argument("--resolution", type=int)
    g.add_argument("--removed", help="comma-separated cluster indices (labelshift)")
    g.set_defaults(func=cmd_generate)

    s = sub.add_parser("sample", help="draw a sample CSV from a problem")
    s.add_argument("problem")
    s.add_argument("--domain", choices=["source", "target"], required=True)
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--labels", action="store_true", default=None, help="keep labels for the target")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_sample)

    d = sub.add_parser("diagnose", help="divergences between two sample files")
    d.add_argument("source")
    d.add_argument("target")
    d.add_argument("--eps", type=float)
    d.add_argument("--eps-quantile", type=float, default=0.05)
    d.add_argument("--kernel-sigma", default="median", help="bandwidth or 'median'")
    d.add_argument("--estimator", choices=["kde", "hist"], default="kde")
    d.add_argument("--bandwidth", default="silverman")
    d.add_argument("--bins", type=int, default=50)
    d.add_argument("--out")
    d.set_defaults(func=cmd_diagnose)

    b = sub.add_parser("bound", help="evaluate a target risk bound for a model")
    b.add_argument("source")
    b.add_argument("target")
    b.add_argument("model")
    b.add_argument("--theorem", type=int, choices=[1, 2, 3], default=2)
    b.add_argument("--eps", type=float)
    b.add_argument("--eta", default="unobservable", help="problem JSON for oracle eta, or 'unobservable'")
    b.add_argument("--exact", action="store_true", help="compute every term from the problem file")
    b.add_argument("--kernel-sigma", default="median")
    b.add_argument("--norm-bound", type=float)
    b.add_argument("--out")
    b.set_defaults(func=cmd_bound)

    r = sub.add_parser("replicate", help="regenerate a worked scenario as CSV tables")
    r.add_argument("scenario", choices=["example1", "overlap", "labelshift"])
    r.add_argument("--out", required=True)
    r.add_argument("--seed", type=int)
    r.add_argument("--seeds", type=int, default=1, help="number of consecutive seeds")
    r.add_argument("--n", type=int, default=200)
    r.add_argument("--eps", type=_floats)
    r.add_argument("--sweep", type=_floats, help="sigmas (example1, overlap) or alphas (labelshift)")
    r.add_argument("--removed", help="comma-separated numbers of removed clusters (labelshift)")
    r.add_argument("--resolution", type=int)
    r.set_defaults(func=cmd_replicate)

    t = sub.add_parser("train", help="fit a linear representation and logistic predictor")
    t.add_argument("source")
    t.add_argument("target")
    t.add_argument("--alpha", type=float, default=0.5)
    t.add_argument("--penalty", choices=["mmd", "hinge-support"], default="mmd")
    t.add_argument("--kernel-sigma", type=float, default=1.0)
    t.add_argument("--eps", type=float, default=0.2)
    t.add_argument("--learning-rate", type=float, default=1.0)
    t.add_argument("--max-iters", type=int, default=500)
    t.add_argument("--k", type=int, default=1)
    t.add_argument("--seed", type=int, required=True)
    t.add_argument("--tune-on-target", help="labelled target CSV for refitting the predictor")
    t.add_argument("--out-model", required=True)
    t.add_argument("--out-trace")
    t.set_defaults(func=cmd_train)
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except DimensionMismatch as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DIM
    except (FloatingPointError, ArithmeticError) as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ParseError, ValueError, OSError, KeyError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_PARSE


if __name__ == "__main__":
    sys.exit(main())
