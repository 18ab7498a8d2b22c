"""
Command-line front end.

    pmvge synth   --kind sbm --n 300 --c 3 --seed 7 --out data/
    pmvge train   --nodes data/nodes.tsv --edges data/edges.tsv --k 3 --out run/
    pmvge embed   --model run/model.bin --nodes data/nodes.tsv --out emb/
    pmvge eval    --task nmi --embedding emb/embedding.tsv --labels data/labels.tsv --out ev/
    pmvge cdmca   --nodes data/nodes.tsv --edges data/edges.tsv --variant cdmca --k 2 --out lin/
    pmvge simfit  --k 50 --t 1000 --n 1000 --out fig/

Exit codes: 0 success, 1 numeric or model failure, 2 usage or input error.
Every command writes ``manifest.json`` into ``--out`` listing the command,
the full configuration, input file hashes and output files.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import __version__
from .encoders import VERSION as CHECKPOINT_VERSION, linear_specs, mlp_specs
from .errors import PMvGEError, ValidationError
from .evaluation import (
    EvalReport,
    Embedding,
    embed_all,
    kmeans_nmi,
    mean_average_precision,
    read_embedding,
    softmax_classify,
    spearman_locality,
    split_indices,
    write_embedding,
    write_reports,
)
from .graph import Dataset, ViewPairSet, format_vector, load_dataset, write_dataset
from .linear import approx_pmvge_linear, build_augmented, cdmca_solve, embed, scaling_equivalence_check
from .model import load_state, log_likelihood, save_state
from .rng import stream
from .simfit import simfit, simfit_config, write_grid
from .synthetic import (
    GenerativeSpec,
    SimGridSpec,
    ViewSampler,
    classifier_dataset,
    gen_pmvge,
    gen_sbm,
    gen_sim_data,
    gen_sim_grid,
    linear_truth,
    sbm_beta,
)
from .training import TrainConfig, Trainer

log = logging.getLogger("pmvge")


class UsageError(Exception):
    pass


def sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


class Run:
    """Output directory plus its manifest."""

    def __init__(self, args, inputs: dict[str, str | None], config: dict | None = None):
        self.out = Path(args.out)
        self.out.mkdir(parents=True, exist_ok=True)
        self.inputs = {}
        for role, p in inputs.items():
            if p is None:
                continue
            if not Path(p).is_file():
                raise FileNotFoundError(f"{role}: no such file {p}")
            self.inputs[role] = {"path": str(p), "sha256": sha256(p)}
        snapshot = {k: v for k, v in sorted(vars(args).items()) if k != "func"}
        if config:
            snapshot.update(config)
        self.manifest = {
            "command": args.command,
            "seed": getattr(args, "seed", None),
            "config": snapshot,
            "inputs": self.inputs,
            "outputs": [],
            "versions": {"pmvge": __version__, "checkpoint": CHECKPOINT_VERSION, "numpy": np.__version__},
            "status": "running",
        }
        self._write()

    def path(self, name: str) -> Path:
        self.manifest["outputs"].append(name)
        return self.out / name

    def _write(self) -> None:
        text = json.dumps(self.manifest, indent=2, sort_keys=True, default=str) + "\n"
        (self.out / "manifest.json").write_text(text)

    def finish(self) -> None:
        self.manifest["status"] = "complete"
        self.manifest["outputs"] = sorted(set(self.manifest["outputs"]))
        self._write()


def _write_kv(path, items: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for k, v in items.items():
            fh.write(f"{k}: {v!r}\n" if isinstance(v, float) else f"{k}: {v}\n")


def _ints(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"expected comma-separated integers, got {text!r}") from None


def _load(args, labels: bool = False) -> Dataset:
    return load_dataset(
        args.nodes, getattr(args, "edges", None), getattr(args, "pairs", None), args.labels if labels else None
    )


# ---------------------------------------------------------------------------
# synth
# ---------------------------------------------------------------------------


def cmd_synth(args) -> int:
    run = Run(args, {})
    truth = [f"kind: {args.kind}", f"seed: {args.seed}"]
    if args.kind == "sbm":
        beta = sbm_beta(args.c, args.within, args.between)
        ds, params = gen_sbm(args.n, args.c, beta, args.seed)
        truth.append("beta: " + ";".join(format_vector(row) for row in params.beta))
        truth.append("memberships: " + ",".join(str(c) for c in params.memberships))
    elif args.kind == "pmvge":
        dims = _ints(args.dims)
        observed = ViewPairSet.parse(args.view_pairs, len(dims))
        state = linear_truth(dims, args.k, observed, args.alpha, seed=int(stream(args.seed, "truth").integers(2**31)))
        spec = GenerativeSpec(args.n, np.full(len(dims), 1.0 / len(dims)), [ViewSampler(p) for p in dims], state)
        ds, oracle = gen_pmvge(spec, args.seed)
        truth += oracle.describe().splitlines()[1:]
    elif args.kind == "simgrid":
        spec = SimGridSpec(a=args.a, resolution=args.resolution)
        ds = gen_sim_data(spec, args.n, args.seed)
        s, G = gen_sim_grid(spec)
        truth += [f"a: {spec.a!r}", f"resolution: {spec.resolution}", "target grid: target_grid.csv"]
        with open(run.path("target_grid.csv"), "w", encoding="utf-8") as fh:
            fh.write("s,t,target\n")
            for a, sa in enumerate(s):
                for b, tb in enumerate(s):
                    fh.write(f"{sa!r},{tb!r},{G[a, b]!r}\n")
    else:
        rng = np.random.default_rng(args.seed)
        centers = rng.normal(0.0, args.separation, size=(args.c, args.dim))
        labels = rng.integers(1, args.c + 1, size=args.n)
        X = centers[labels - 1] + rng.normal(size=(args.n, args.dim))
        ds = classifier_dataset(X, labels, args.c)
        truth.append("centers: " + ";".join(format_vector(row) for row in centers))
    for p in write_dataset(ds, run.out).values():
        run.manifest["outputs"].append(p.name)
    (run.path("truth.txt")).write_text("\n".join(truth) + "\n")
    run.finish()
    print(f"wrote {ds.n} nodes, {len(ds.weights)} links to {run.out}")
    return 0


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------


def _overrides(items) -> dict:
    out = {}
    for item in items or []:
        if "=" not in item:
            raise UsageError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def _config(args) -> TrainConfig:
    overrides = _overrides(args.set)
    for key in ("iterations", "lr", "m", "r"):
        v = getattr(args, key, None)
        if v is not None:
            overrides[key] = v
    overrides["seed"] = args.seed
    if args.config:
        if not Path(args.config).is_file():
            raise FileNotFoundError(f"config: no such file {args.config}")
        return TrainConfig.from_file(args.config, **overrides)
    return TrainConfig.from_text("", **overrides)


def _encoder_specs(args, dims) -> list:
    hidden = _ints(args.hidden) if args.hidden else []
    if not hidden:
        return [linear_specs(p, args.k) for p in dims]
    return [mlp_specs(p, hidden, args.k, args.activation, args.output_activation) for p in dims]


def cmd_train(args) -> int:
    config = _config(args)
    run = Run(args, {"nodes": args.nodes, "edges": args.edges, "config": args.config}, {"train": config.__dict__})
    ds = _load(args)
    specs = _encoder_specs(args, ds.dims)
    trainer = Trainer(ds, specs, config)
    initial = log_likelihood(ds, trainer.state, trainer.pairs)
    report = trainer.run()
    final = log_likelihood(ds, report.state, trainer.pairs)
    save_state(run.path("model.bin"), report.state)
    run.manifest["outputs"].append("model.bin.dims.txt")
    report.write_log(run.path("train_log.csv"))
    summary = {
        "iterations": config.iterations,
        "tau": report.tau,
        "initial_loglik": initial,
        "final_loglik": final,
        "alpha": " ".join(f"{d}-{e}={report.state.alpha[d, e]!r}" for d, e in ds.observed_pairs),
    }
    _write_kv(run.path("summary.txt"), summary)
    for ev in report.events:
        log.warning(ev)
    log.info("trained %d iterations in %.2fs", config.iterations, report.wall_clock)
    run.finish()
    print(f"log-likelihood {initial!r} -> {final!r}")
    return 0


# ---------------------------------------------------------------------------
# embed / eval
# ---------------------------------------------------------------------------


def cmd_embed(args) -> int:
    run = Run(args, {"model": args.model, "nodes": args.nodes})
    state = load_state(args.model)
    ds = load_dataset(args.nodes, None)
    emb = embed_all(state, ds)
    write_embedding(run.path("embedding.tsv"), emb)
    run.finish()
    print(f"embedded {ds.n} nodes into R^{emb.K}")
    return 0


def _read_labels(path, emb: Embedding) -> np.ndarray:
    index = emb.index()
    labels = np.full(len(emb.Y), -1, dtype=np.int64)
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip() or line.startswith("#"):
                continue
            cols = line.rstrip("\n").split("\t")
            if len(cols) != 2 or cols[0] not in index:
                raise ValidationError(f"{path}:{lineno}: expected 'node_id<TAB>class' for a known node")
            labels[index[cols[0]]] = int(cols[1])
    return labels


def _read_truth_pairs(path, emb: Embedding) -> list[tuple[int, int]]:
    index = emb.index()
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip() or line.startswith("#"):
                continue
            cols = line.rstrip("\n").split("\t")
            if len(cols) < 2 or cols[0] not in index or cols[1] not in index:
                raise ValidationError(f"{path}:{lineno}: expected two known node ids")
            out.append((index[cols[0]], index[cols[1]]))
    return out


def _labelled(args, emb: Embedding) -> np.ndarray:
    labels = _read_labels(args.labels, emb)
    keep = labels >= 0
    if args.view is not None:
        keep &= emb.node_view == args.view
    return np.flatnonzero(keep), labels


def cmd_eval(args) -> int:
    needs = {"ap": "truth", "nmi": "labels", "classify": "labels", "spearman": "nodes"}[args.task]
    if getattr(args, needs) is None:
        raise UsageError(f"--task {args.task} requires --{needs}")
    run = Run(args, {"embedding": args.embedding, "truth": args.truth, "labels": args.labels, "nodes": args.nodes})
    emb = read_embedding(args.embedding)
    settings: dict = {}
    if args.task == "ap":
        truth = _read_truth_pairs(args.truth, emb)
        qv = args.query_view or 1
        cv = args.candidate_view or (2 if emb.node_view.max() > 1 else 1)
        value, nq = mean_average_precision(emb, truth, qv, cv)
        metric, settings = "ap", {"query_view": qv, "candidate_view": cv, "queries": nq}
    elif args.task == "nmi":
        idx, labels = _labelled(args, emb)
        k = args.k or len(np.unique(labels[idx]))
        seed = int(stream(args.seed, "kmeans").integers(2**31))
        value = kmeans_nmi(emb.Y[idx], labels[idx], k, seed, args.restarts)
        metric, settings = "nmi", {"k": k, "restarts": args.restarts, "normalization": "sqrt"}
    elif args.task == "classify":
        idx, labels = _labelled(args, emb)
        tr, te = split_indices(len(idx), args.train_frac, int(stream(args.seed, "split").integers(2**31)))
        value = softmax_classify(emb.Y[idx[tr]], labels[idx[tr]], emb.Y[idx[te]], labels[idx[te]], args.reg, args.seed)
        metric, settings = "accuracy", {"train_frac": args.train_frac, "reg": args.reg, "test": len(te)}
    else:
        ds = load_dataset(args.nodes, None)
        if ds.n != len(emb.Y) or any(ds.name_of(i) != emb.name_of(i) for i in range(ds.n)):
            raise ValidationError("embedding and node file list different nodes")
        view = args.view or 1
        value = spearman_locality(ds, emb, view, args.sample_pairs, args.seed)
        metric, settings = "spearman", {"view": view, "sample_pairs": args.sample_pairs}
    write_reports(run.path("report.csv"), [EvalReport(args.task, metric, value, args.seed, settings)])
    run.finish()
    print(f"{metric}: {value!r}")
    return 0


# ---------------------------------------------------------------------------
# cdmca
# ---------------------------------------------------------------------------


def cmd_cdmca(args) -> int:
    run = Run(args, {"nodes": args.nodes, "edges": args.edges})
    ds = _load(args)
    design = build_augmented(ds, center=not args.no_center)
    base = cdmca_solve(design, args.k, args.eps)
    sol = base if args.variant == "cdmca" else approx_pmvge_linear(design, args.k, args.alpha0, args.eps)
    views = design.column_view()
    with open(run.path("psi.tsv"), "w", encoding="utf-8") as fh:
        fh.write("# view_id\tcoordinate\tpsi_row\n")
        for r in range(design.p):
            coord = r - design.offsets[views[r] - 1]
            fh.write(f"{views[r]}\t{coord}\t{format_vector(sol.psi[r])}\n")
    write_embedding(run.path("embedding.tsv"), Embedding(embed(design, sol), ds.node_view, ds.node_names))
    items = {
        "variant": args.variant,
        "K": sol.K,
        "centered": not args.no_center,
        "eps": sol.eps,
        "eigenvalues": format_vector(sol.eigenvalues),
        "degenerate": sol.degenerate,
    }
    if sol.gammas is not None:
        check = scaling_equivalence_check(base, sol, design)
        items.update(
            alpha0=sol.alpha0,
            gammas=format_vector(sol.gammas),
            column_deviation=check.column_deviation,
            inner_product_deviation=check.inner_product_deviation,
        )
    _write_kv(run.path("report.txt"), items)
    run.finish()
    print(f"{args.variant}: K={sol.K} top eigenvalue {float(sol.eigenvalues[0])!r}")
    return 0


# ---------------------------------------------------------------------------
# simfit
# ---------------------------------------------------------------------------


def cmd_simfit(args) -> int:
    overrides = _overrides(args.set)
    if args.iterations is not None:
        overrides["iterations"] = args.iterations
    config = TrainConfig.from_text(simfit_config(seed=args.seed).to_text(), **overrides)
    run = Run(args, {}, {"train": config.__dict__})
    spec = SimGridSpec(a=args.a, resolution=args.resolution)
    res = simfit(spec, args.k, args.t, args.n, config, seed=args.seed)
    write_grid(run.path("grid.csv"), res.axis, res.learned, res.target)
    res.report.write_log(run.path("train_log.csv"))
    _write_kv(
        run.path("summary.txt"),
        {"K": args.k, "T": args.t, "n": args.n, "mean_abs_error": res.mean_abs_error, "max_abs_error": res.max_abs_error},
    )
    run.finish()
    print(f"K={args.k}: mean abs error {res.mean_abs_error:.6f}, max {res.max_abs_error:.6f}")
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="pmvge", description="Probabilistic multi-view graph embedding")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def command(name, func, help):
        p = sub.add_parser(name, help=help)
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, default=0)
        p.set_defaults(func=func)
        return p

    p = command("synth", cmd_synth, "generate a synthetic dataset")
    p.add_argument("--kind", required=True, choices=["sbm", "pmvge", "simgrid", "classifier"])
    p.add_argument("--n", type=int, default=300)
    p.add_argument("--c", type=int, default=3, help="clusters / classes")
    p.add_argument("--within", type=float, default=5.0)
    p.add_argument("--between", type=float, default=0.1)
    p.add_argument("--dims", default="3,3", help="per-view input dimensions (pmvge)")
    p.add_argument("--k", type=int, default=2)
    p.add_argument("--view-pairs", default="all")
    p.add_argument("--alpha", type=float, default=1.0)
    p.add_argument("--a", type=float, default=2.0)
    p.add_argument("--resolution", type=int, default=50)
    p.add_argument("--dim", type=int, default=5, help="sample dimension (classifier)")
    p.add_argument("--separation", type=float, default=3.0)

    p = command("train", cmd_train, "fit encoders and alpha")
    p.add_argument("--nodes", required=True)
    p.add_argument("--edges", required=True)
    p.add_argument("--pairs", help="observed view pairs, e.g. '1-2' or 'all'")
    p.add_argument("--config", help="key=value file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")
    p.add_argument("--iterations", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--m", type=int)
    p.add_argument("--r", type=float)
    p.add_argument("--k", type=int, default=2)
    p.add_argument("--hidden", default="", help="hidden widths, e.g. '64,64'; empty = linear")
    p.add_argument("--activation", default="tanh")
    p.add_argument("--output-activation", default="identity")

    p = command("embed", cmd_embed, "compute feature vectors")
    p.add_argument("--model", required=True)
    p.add_argument("--nodes", required=True)

    p = command("eval", cmd_eval, "evaluate an embedding")
    p.add_argument("--task", required=True, choices=["ap", "nmi", "classify", "spearman"])
    p.add_argument("--embedding", required=True)
    p.add_argument("--truth", help="query<TAB>candidate relevant pairs (ap)")
    p.add_argument("--labels", help="node_id<TAB>class (nmi, classify)")
    p.add_argument("--nodes", help="data vectors (spearman)")
    p.add_argument("--view", type=int)
    p.add_argument("--query-view", type=int)
    p.add_argument("--candidate-view", type=int)
    p.add_argument("--k", type=int)
    p.add_argument("--restarts", type=int, default=10)
    p.add_argument("--train-frac", type=float, default=0.8)
    p.add_argument("--reg", type=float, default=1e-4)
    p.add_argument("--sample-pairs", type=int, default=10000)

    p = command("cdmca", cmd_cdmca, "closed-form linear embedding")
    p.add_argument("--nodes", required=True)
    p.add_argument("--edges", required=True)
    p.add_argument("--pairs")
    p.add_argument("--variant", default="cdmca", choices=["cdmca", "pmvge-linear"])
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--alpha0", type=float, default=1.0)
    p.add_argument("--eps", type=float)
    p.add_argument("--no-center", action="store_true")

    p = command("simfit", cmd_simfit, "fit the cosine-similarity surface")
    p.add_argument("--k", type=int, default=50)
    p.add_argument("--t", type=int, default=1000, help="ReLU hidden units")
    p.add_argument("--n", type=int, default=1000)
    p.add_argument("--a", type=float, default=2.0)
    p.add_argument("--resolution", type=int, default=50)
    p.add_argument("--iterations", type=int)
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    return ap


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    threads = os.environ.get("MVGE_THREADS")
    try:
        limit = int(threads) if threads else None
    except ValueError:
        parser.error(f"MVGE_THREADS must be an integer, got {threads!r}")
    try:
        with threadpool_limits(limits=limit):
            return args.func(args)
    except UsageError as exc:
        parser.error(str(exc))
    except (FileNotFoundError, IsADirectoryError, ValidationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (PMvGEError, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
