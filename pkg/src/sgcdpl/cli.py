"""Command line front end.

Exit codes: 0 success, 1 input error, 2 numerical failure,
3 guidance unavailable.
"""

from __future__ import annotations

import dataclasses
import functools
import json
import sys
from pathlib import Path

import click
import numpy as np

from .ap import ApConfig, ap_cluster, uniform_preference
from .data import compute_similarity, generate_synthetic, load_embeddings, save_embeddings
from .errors import SgcdplError
from .evaluation import dbscan_cluster, evaluate_clustering, evaluate_retrieval, metrics_json
from .pipeline import PipelineConfig, reports_json, run_pipeline
from .refiner import TrainConfig
from .sgap import PreferenceSearchConfig, adaptive_preference, search_p_star, sg_ap_cluster


def handle_errors(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except SgcdplError as e:
            click.echo(f"error: {e}", err=True)
            sys.exit(e.exit_code)
    return wrapper


@click.group()
def main():
    """Semantics-guided clustering with progressive pseudo-labeling."""


@main.command()
@click.option("--ids", type=int, required=True, help="number of identities")
@click.option("--per-id", type=int, required=True, help="samples per identity")
@click.option("--dim", type=int, default=16, show_default=True)
@click.option("--std", type=float, default=0.1, show_default=True)
@click.option("--spacing", type=float, default=2.0, show_default=True)
@click.option("--labeled-frac", type=float, default=0.5, show_default=True)
@click.option("--query-per-id", type=int, default=0, show_default=True)
@click.option("--gallery-per-id", type=int, default=0, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", type=click.Path(), required=True)
@handle_errors
def synth(ids, per_id, dim, std, spacing, labeled_frac, query_per_id,
          gallery_per_id, seed, out):
    """Generate a synthetic embedding dataset CSV."""
    es = generate_synthetic(ids, per_id, dim, std, spacing, labeled_frac, seed,
                            query_per_identity=query_per_id,
                            gallery_per_identity=gallery_per_id)
    save_embeddings(es, out)
    click.echo(f"wrote {len(es)} samples to {out}")


@main.command()
@click.argument("csv_path", type=click.Path(exists=True))
@click.option("--algo", type=click.Choice(["ap", "sg-ap", "dbscan"]), default="ap",
              show_default=True)
@click.option("--preference", type=click.Choice(["median", "min", "adaptive", "search"]),
              default="median", show_default=True,
              help="preference rule for --algo ap (adaptive/search need labeled rows)")
@click.option("--p", type=float, default=None, help="preference scalar for adaptive mode")
@click.option("--target-c", type=int, default=None,
              help="target cluster count for search / sg-ap (default: labeled identity count)")
@click.option("--eps", type=float, default=0.5, show_default=True, help="DBSCAN radius")
@click.option("--min-pts", type=int, default=4, show_default=True)
@click.option("--split", default=None,
              help="restrict clustering to one split (default: sg-ap uses labeled+unlabeled, others all rows)")
@click.option("--out", type=click.Path(), default=None, help="assignment JSON path (default stdout)")
@handle_errors
def cluster(csv_path, algo, preference, p, target_c, eps, min_pts, split, out):
    """Cluster a CSV of embeddings, emitting assignment JSON."""
    es = load_embeddings(csv_path)
    if algo == "sg-ap":
        labeled = es.split_subset("labeled")
        unlabeled = es.split_subset("unlabeled")
        cfg = PreferenceSearchConfig(
            target_cluster_count=target_c or len(labeled.labeled_identities))
        assignment, search = sg_ap_cluster(labeled, unlabeled, cfg)
        payload = json.loads(assignment.to_json())
        payload["p_star"] = search.p_star
        payload["search_trace"] = [[pp, c] for pp, c in search.trace]
    else:
        if split:
            es = es.split_subset(split)
        if algo == "dbscan":
            assignment = dbscan_cluster(es, eps=eps, min_points=min_pts)
        else:
            sim = compute_similarity(es)
            if preference in ("median", "min"):
                sim = uniform_preference(sim, preference)
            elif preference == "adaptive":
                sim = adaptive_preference(sim, p if p is not None
                                          else float(np.median(sim.offdiag())))
            else:  # search
                cfg = PreferenceSearchConfig(
                    target_cluster_count=target_c or len(es.labeled_identities))
                result = search_p_star(sim, cfg)
                sim = adaptive_preference(sim, result.p_star)
            assignment = ap_cluster(sim)
        payload = json.loads(assignment.to_json())
    text = json.dumps(payload, sort_keys=True)
    if out:
        Path(out).write_text(text + "\n")
    else:
        click.echo(text)


def load_config_file(path):
    """Flat `key = value` config with # comments."""
    values = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise SgcdplError(f"{path}:{lineno}: expected key = value")
        key, _, val = line.partition("=")
        values[key.strip()] = val.strip()
    return values


_BOOL = {"true": True, "false": False, "1": True, "0": False, "yes": True, "no": False}


def build_pipeline_config(values) -> PipelineConfig:
    def get(key, cast, default):
        if key not in values:
            return default
        raw = values[key]
        if cast is bool:
            return _BOOL[str(raw).strip().lower()]
        return cast(raw)

    train_kwargs = {}
    for key, cast in [("p_identities", int), ("k_per_identity", int), ("margin", float),
                      ("learning_rate", float), ("epochs", int),
                      ("triplet_weight", float), ("id_weight", float)]:
        if key in values:
            train_kwargs[key] = cast(values[key])
    refine = TrainConfig(**train_kwargs)
    init = dataclasses.replace(refine,
                               aug_weight=get("aug_weight", float, 1.0),
                               epochs=get("init_epochs", int, refine.epochs))
    return PipelineConfig(
        total_iterations=get("iterations", int, 8),
        seed=get("seed", int, 0),
        embed_dim=get("embed_dim", int, None),
        clustering_mode=get("clustering", str, "sg-ap"),
        joint_ranking=get("joint_ranking", bool, False),
        d_step=get("d_step", float, 0.25),
        absolute_schedule=get("absolute_schedule", bool, False),
        re_search_p_each_iteration=get("re_search_p", bool, True),
        re_estimate_tau_each_iteration=get("re_estimate_tau", bool, True),
        warm_start=get("warm_start", bool, True),
        bin_count=get("bin_count", int, 100),
        stall_window=get("stall_window", int, 5),
        max_search_steps=get("max_search_steps", int, 40),
        ap_config=ApConfig(damping=get("damping", float, 0.9),
                           max_iterations=get("ap_max_iterations", int, 1000),
                           convergence_window=get("ap_convergence_window", int, 50)),
        init_config=init,
        refine_config=refine,
    )


@main.command()
@click.argument("csv_path", type=click.Path(exists=True))
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--iterations", type=int, default=None, help="override total iterations")
@click.option("--seed", type=int, default=None, help="override seed")
@click.option("--clustering", type=click.Choice(["sg-ap", "ap-median"]), default=None)
@click.option("--out-dir", type=click.Path(), required=True)
@handle_errors
def pipeline(csv_path, config_path, iterations, seed, clustering, out_dir):
    """Full progressive-learning run over a CSV with labeled/unlabeled rows
    (and optional query/gallery rows for held-out retrieval)."""
    values = load_config_file(config_path) if config_path else {}
    if iterations is not None:
        values["iterations"] = iterations
    if seed is not None:
        values["seed"] = seed
    if clustering is not None:
        values["clustering"] = clustering
    cfg = build_pipeline_config(values)

    es = load_embeddings(csv_path)
    labeled = es.split_subset("labeled")
    unlabeled = es.split_subset("unlabeled")
    try:
        query = es.split_subset("query")
        gallery = es.split_subset("gallery")
    except SgcdplError:
        query = gallery = None
    _, reports = run_pipeline(labeled, unlabeled, query, gallery, cfg)

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "reports.json").write_text(reports_json(reports) + "\n")
    lines = ["iteration,cluster_count,reliable_count,tau,pseudo_label_accuracy,rank1,map"]
    for r in reports:
        ret = r.retrieval or {}
        lines.append(",".join("" if v is None else repr(v) if isinstance(v, float) else str(v)
                              for v in [r.iteration, r.cluster_count, r.reliable_count,
                                        r.tau, r.pseudo_label_accuracy,
                                        ret.get("rank1"), ret.get("map")]))
    (out / "curves.csv").write_text("\n".join(lines) + "\n")
    click.echo(f"wrote {out / 'reports.json'}")


@main.command(name="eval")
@click.option("--query", "query_path", type=click.Path(exists=True), default=None)
@click.option("--gallery", "gallery_path", type=click.Path(exists=True), default=None)
@click.option("--cross-camera", is_flag=True, default=False)
@click.option("--clustered", "clustered_path", type=click.Path(exists=True), default=None,
              help="CSV whose rows the assignment JSON covers")
@click.option("--assignment", "assignment_path", type=click.Path(exists=True), default=None)
@click.option("--out", type=click.Path(), default=None)
@handle_errors
def eval_cmd(query_path, gallery_path, cross_camera, clustered_path, assignment_path, out):
    """Retrieval and/or clustering metrics from CSVs and assignment JSON."""
    from .ap import ClusterAssignment
    retrieval = clustering = None
    if query_path and gallery_path:
        q = load_embeddings(query_path)
        g = load_embeddings(gallery_path)
        retrieval = evaluate_retrieval(q, g, cross_camera=cross_camera)
    if clustered_path and assignment_path:
        es = load_embeddings(clustered_path)
        assignment = ClusterAssignment.from_json(Path(assignment_path).read_text())
        clustering = evaluate_clustering(assignment, es.identities())
    if retrieval is None and clustering is None:
        raise SgcdplError("nothing to evaluate: pass --query/--gallery and/or "
                          "--clustered/--assignment")
    text = metrics_json(retrieval, clustering)
    if out:
        Path(out).write_text(text + "\n")
    else:
        click.echo(text)


if __name__ == "__main__":
    main()
