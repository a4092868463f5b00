"""Operator command line for the full pipeline.

Stages write fixed-name artifacts into the output directory so later
stages can find them, plus a deterministic JSON report (config echoed) and
a JSON-lines training log. Each invocation also gets its own run directory
(timestamp + config hash) holding a copy of the report for traceability.

    vpre synth-data        -> corpus/ (TSV + PNG + ground truth)
    vpre train-classifier  -> classifier.vpre
    vpre train-rec         -> {bpr|vbpr|dvbpr}.vpre
    vpre train-gan         -> gan.vpre
    vpre eval-auc          -> reports/eval-auc.json
    vpre compare-sources   -> reports/compare-sources.json
    vpre design / tailor   -> design/ or tailor/ (PNG + manifest)
    vpre serve             -> HTTP service over the trained artifacts
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
import time


def _ensure_single_thread() -> None:
    # must run before numpy is imported anywhere in this process
    if os.environ.get("VPRE_THREADS"):
        return
    for var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS",
                "NUMEXPR_NUM_THREADS"):
        os.environ.setdefault(var, "1")


def _write_json(path: str, payload: dict) -> None:
    os.makedirs(os.path.dirname(path), exist_ok=True)
    tmp = path + ".tmp"
    with open(tmp, "w") as f:
        json.dump(payload, f, sort_keys=True, indent=1)
        f.write("\n")
    os.replace(tmp, path)


class _JsonlLog:
    def __init__(self, path: str):
        os.makedirs(os.path.dirname(path), exist_ok=True)
        self.f = open(path, "w")

    def __call__(self, entry: dict) -> None:
        self.f.write(json.dumps(entry, sort_keys=True) + "\n")
        self.f.flush()

    def close(self):
        self.f.close()


def _finish(cfg, name: str, report: dict) -> None:
    report = {"subcommand": name, "config": cfg.to_dict(), **report}
    _write_json(os.path.join(cfg.out_dir, "reports", f"{name}.json"), report)
    run_dir = os.path.join(cfg.out_dir, "runs",
                           f"{time.strftime('%Y%m%d-%H%M%S')}-{cfg.config_hash()}-{name}")
    _write_json(os.path.join(run_dir, "report.json"), report)
    print(json.dumps({k: v for k, v in report.items() if k != "config"},
                     sort_keys=True, indent=1))


def _load_corpus(cfg):
    from .corpus import load_corpus, split_leave_one_out
    corpus_dir = cfg.corpus_dir or os.path.join(cfg.out_dir, "corpus")
    corpus = load_corpus(os.path.join(corpus_dir, "interactions.tsv"),
                         os.path.join(corpus_dir, "items.tsv"),
                         os.path.join(corpus_dir, "images"),
                         image_side=cfg.image_side)
    return split_leave_one_out(corpus, seed=cfg.seed)


def _features(cfg, corpus):
    from .evalmetrics import load_classifier
    clf = load_classifier(os.path.join(cfg.out_dir, "classifier.vpre"))
    return clf, clf.features(corpus.float_images())


def cmd_synth_data(cfg) -> dict:
    import numpy as np
    from .corpus import write_corpus
    from .synth import SyntheticStyleSpec, generate_synthetic
    spec = SyntheticStyleSpec(image_side=cfg.image_side,
                              extra_positives_mean=cfg.synth_extra_positives)
    corpus = generate_synthetic(spec, cfg.synth_users, cfg.synth_items, seed=cfg.seed)
    out = os.path.join(cfg.out_dir, "corpus")
    write_corpus(corpus, out)
    with open(os.path.join(out, "synth_spec.json"), "w") as f:
        f.write(spec.to_json() + "\n")
    gt = corpus.ground_truth
    _write_json(os.path.join(out, "ground_truth.json"), {
        "users": corpus.users,
        "user_vectors": gt.user_vectors.tolist(),
        "item_ids": corpus.item_ids,
        "item_vectors": gt.item_vectors.tolist(),
        "attributes": gt.attributes,
        "sharpness": gt.sharpness,
    })
    return {"corpus_dir": out, "n_users": corpus.n_users, "n_items": corpus.n_items,
            "n_interactions": corpus.n_interactions,
            "acceptance_rate": gt.acceptance_rate}


def cmd_train_classifier(cfg) -> dict:
    import numpy as np
    from .evalmetrics import ClassifierConfig, save_classifier, train_classifier
    corpus = _load_corpus(cfg)
    log = _JsonlLog(os.path.join(cfg.out_dir, "logs", "train-classifier.jsonl"))
    clf, history = train_classifier(corpus, ClassifierConfig(
        epochs=cfg.classifier_epochs, feature_dim=cfg.feature_dim, seed=cfg.seed))
    for entry in history:
        log(entry)
    log.close()
    labels = np.array([it.category_id for it in corpus.items])
    acc = clf.accuracy(corpus.float_images(), labels)
    path = os.path.join(cfg.out_dir, "classifier.vpre")
    save_classifier(path, clf, seed=cfg.seed)
    return {"checkpoint": path, "accuracy": acc, "final_loss": history[-1]["loss"]}


def cmd_train_rec(cfg, model: str) -> dict:
    from .evalmetrics import auc
    from .rank import RankConfig, make_scorer, save_model, train, tune_lambda
    corpus = _load_corpus(cfg)
    kind = {"bpr": "mf", "vbpr": "vbpr", "dvbpr": "dvbpr"}[model]
    feats = None
    if kind == "vbpr":
        _, feats = _features(cfg, corpus)
    if kind == "dvbpr":
        rc = RankConfig(model=kind, latent_dim=cfg.latent_dim, epochs=cfg.dvbpr_epochs,
                        batch_size=cfg.dvbpr_batch, lr=cfg.dvbpr_lr,
                        lr_factors=cfg.dvbpr_lr_factors, reg_visual=cfg.reg_visual,
                        weight_decay=cfg.weight_decay, dropout=cfg.dropout,
                        cnn_preset=cfg.cnn_preset, cnn_input_side=cfg.cnn_input_side,
                        seed=cfg.seed)
    else:
        rc = RankConfig(model=kind, latent_dim=cfg.latent_dim, epochs=cfg.mf_epochs,
                        lr=cfg.mf_lr, reg_lambda=cfg.reg_lambda or 0.01, seed=cfg.seed)
    log = _JsonlLog(os.path.join(cfg.out_dir, "logs", f"train-rec-{model}.jsonl"))
    if kind in ("mf", "vbpr") and cfg.reg_lambda is None:
        result = tune_lambda(rc, corpus, item_features=feats, log=log)
    else:
        result = train(rc, corpus, item_features=feats, log=log)
    log.close()
    path = os.path.join(cfg.out_dir, f"{model}.vpre")
    save_model(path, result.model, result.config or rc)
    rep = auc(corpus, make_scorer(result.model, corpus))
    return {"checkpoint": path, "model": model,
            "best_val_auc": result.best_val_auc, "best_epoch": result.best_epoch,
            "test_auc": rep.auc, "test_cold_auc": rep.cold_auc}


def cmd_train_gan(cfg) -> dict:
    import numpy as np
    from .gan import GanConfig, save_pair, train_gan
    corpus = _load_corpus(cfg)
    gc = GanConfig(image_side=cfg.gan_side, batch_size=cfg.gan_batch_effective,
                   epochs=cfg.gan_epochs, lr=cfg.gan_lr_effective, seed=cfg.seed)
    log = _JsonlLog(os.path.join(cfg.out_dir, "logs", "train-gan.jsonl"))
    result = train_gan(corpus, gc, log=log)
    log.close()
    path = os.path.join(cfg.out_dir, "gan.vpre")
    save_pair(path, result.pair, corpus.n_categories)
    hold = result.holdout_indices
    images = corpus.float_images()
    labels = np.array([it.category_id for it in corpus.items])
    d_real = result.pair.discriminate(images[hold], labels[hold]).data
    z = result.pair.sample_latent(np.random.default_rng(cfg.seed), len(hold))
    fake = result.pair.generate(z, labels[hold]).data
    d_fake = result.pair.discriminate(fake, labels[hold]).data
    return {"checkpoint": path, "steps": len(result.history),
            "holdout_items": [corpus.item_ids[int(k)] for k in hold],
            "d_real_mean": float(d_real.mean()), "d_fake_mean": float(d_fake.mean()),
            "final_d_loss": result.history[-1]["d_loss"],
            "final_g_loss": result.history[-1]["g_loss"]}


def cmd_eval_auc(cfg, scorers: list[str], setting: str) -> dict:
    from .evalmetrics import auc, format_auc_table
    from .rank import (load_model, make_scorer, rank_popularity, rank_random,
                       rank_visrank)
    corpus = _load_corpus(cfg)
    out = {}
    reports = {}
    feats = None
    for name in scorers:
        if name == "rand":
            scorer = rank_random(corpus, cfg.seed)
        elif name == "pop":
            scorer = rank_popularity(corpus)
        elif name == "visrank":
            if feats is None:
                _, feats = _features(cfg, corpus)
            scorer = rank_visrank(corpus, feats)
        elif name in ("bpr", "vbpr", "dvbpr"):
            if name == "vbpr" and feats is None:
                _, feats = _features(cfg, corpus)
            model, _ = load_model(os.path.join(cfg.out_dir, f"{name}.vpre"),
                                  corpus, feats)
            scorer = make_scorer(model, corpus)
        else:
            raise ValueError(f"unknown scorer {name!r}")
        rep = auc(corpus, scorer)
        reports[name] = rep
        out[name] = {"auc": rep.auc, "cold_auc": rep.cold_auc,
                     "summary": rep.summary()}
    print(format_auc_table(reports), file=sys.stderr)
    primary = {n: (v["cold_auc"] if setting == "cold" else v["auc"])
               for n, v in out.items()}
    return {"setting": setting, "primary": primary, "detail": out}


def cmd_compare_sources(cfg, n_trials: int, k: int) -> dict:
    from .evalmetrics import compare_sources, format_comparison_table, load_classifier
    from .gan import load_pair
    from .rank import load_model
    corpus = _load_corpus(cfg)
    clf = load_classifier(os.path.join(cfg.out_dir, "classifier.vpre"))
    dvbpr, _ = load_model(os.path.join(cfg.out_dir, "dvbpr.vpre"), corpus)
    pair = load_pair(os.path.join(cfg.out_dir, "gan.vpre"))
    report = compare_sources(corpus, dvbpr, pair, clf, n_trials=n_trials, k=k,
                             quality_weight=cfg.design_eta,
                             n_starts=min(cfg.design_starts, 8),
                             iterations=min(cfg.design_iterations, 30), seed=cfg.seed)
    print(format_comparison_table(report), file=sys.stderr)
    return {"n_trials": n_trials, "k": k, "sources": report}


def _save_candidate_pngs(cfg, sub: str, cands) -> list[dict]:
    from .corpus import encode_png, from_float
    import numpy as np
    out_dir = os.path.join(cfg.out_dir, sub)
    os.makedirs(out_dir, exist_ok=True)
    manifest = []
    for rank_idx, cand in enumerate(cands):
        name = f"candidate_{rank_idx:02d}.png"
        with open(os.path.join(out_dir, name), "wb") as f:
            f.write(encode_png(from_float(np.clip(cand.image, -1, 1))))
        manifest.append({"file": name, "objective": cand.objective,
                         "preference": cand.preference,
                         "quality_penalty": cand.quality_penalty,
                         "latent": [float(v) for v in cand.latent],
                         "trace": cand.trace, "start_index": cand.start_index})
    return manifest


def cmd_design(cfg, user: str, category: int, eta: float, m: int, k: int,
               mode: str) -> dict:
    import numpy as np
    from .designer import DesignQuery, select_top_k, synthesize_best
    from .gan import load_pair
    from .rank import load_model
    corpus = _load_corpus(cfg)
    dvbpr, _ = load_model(os.path.join(cfg.out_dir, "dvbpr.vpre"), corpus)
    pair = load_pair(os.path.join(cfg.out_dir, "gan.vpre"))
    query = DesignQuery(user_id=user, category_id=category, quality_weight=eta,
                        n_starts=m, k=k, mode=mode,
                        iterations=cfg.design_iterations, seed=cfg.seed)
    cands = synthesize_best(query, corpus, dvbpr, pair)
    chosen = select_top_k(cands, k, mode=mode,
                          rng=np.random.default_rng(cfg.seed))
    manifest = _save_candidate_pngs(cfg, "design", chosen)
    report = {"user": user, "category": category, "eta": eta, "m": m, "k": k,
              "mode": mode, "candidates": manifest,
              "mean_preference": float(np.mean([c.preference for c in chosen])),
              "mean_objective": float(np.mean([c.objective for c in chosen]))}
    _write_json(os.path.join(cfg.out_dir, "design", "manifest.json"), report)
    return report


def cmd_tailor(cfg, user: str, category: int, item_id: str | None,
               image_path: str | None, iterations: int) -> dict:
    import numpy as np
    from .corpus import decode_png, encode_png, from_float, to_float
    from .designer import tailor
    from .gan import load_pair
    from .rank import load_model
    corpus = _load_corpus(cfg)
    dvbpr, _ = load_model(os.path.join(cfg.out_dir, "dvbpr.vpre"), corpus)
    pair = load_pair(os.path.join(cfg.out_dir, "gan.vpre"))
    if item_id:
        proto = to_float(corpus.items[corpus.item_index[item_id]].image)
    elif image_path:
        with open(image_path, "rb") as f:
            proto = to_float(decode_png(f.read()))
    else:
        raise ValueError("tailor needs --item or --image")
    res = tailor(proto, user, category, corpus, dvbpr, pair,
                 iterations=iterations, quality_weight=cfg.design_eta,
                 seed=cfg.seed)
    out_dir = os.path.join(cfg.out_dir, "tailor")
    os.makedirs(out_dir, exist_ok=True)
    steps = []
    for cp in res.checkpoints:
        name = f"step_{cp.step:04d}.png"
        with open(os.path.join(out_dir, name), "wb") as f:
            f.write(encode_png(from_float(np.clip(cp.image, -1, 1))))
        steps.append({"file": name, "step": cp.step, "preference": cp.preference,
                      "objective": cp.objective})
    report = {"user": user, "category": category, "item_id": item_id,
              "iterations": iterations, "inversion_error": res.inversion.error,
              "checkpoints": steps, "final_objective": res.final.objective,
              "final_preference": res.final.preference}
    _write_json(os.path.join(out_dir, "manifest.json"), report)
    return report


def cmd_serve(cfg) -> dict:
    from .service import ServiceConfig, run_server
    sc = ServiceConfig(host=cfg.host, port=cfg.port, workers=cfg.workers,
                       corpus_dir=cfg.corpus_dir or os.path.join(cfg.out_dir, "corpus"),
                       dvbpr_checkpoint=os.path.join(cfg.out_dir, "dvbpr.vpre"),
                       gan_checkpoint=os.path.join(cfg.out_dir, "gan.vpre"),
                       classifier_checkpoint=os.path.join(cfg.out_dir, "classifier.vpre"),
                       results_dir=os.path.join(cfg.out_dir, "results"),
                       image_side=cfg.image_side)
    run_server(sc)
    return {}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="vpre", description=__doc__,
                                formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--config", help="JSON config file (RunConfig fields)")
    p.add_argument("--out-dir", dest="out_dir")
    p.add_argument("--corpus-dir", dest="corpus_dir")
    p.add_argument("--seed", type=int)
    p.add_argument("--preset", choices=["desk", "full"])
    sub = p.add_subparsers(dest="command", required=True)

    sd = sub.add_parser("synth-data", help="generate the synthetic corpus")
    sd.add_argument("--users", type=int, dest="synth_users")
    sd.add_argument("--items", type=int, dest="synth_items")
    sd.add_argument("--image-side", type=int, dest="image_side")

    sub.add_parser("train-classifier", help="train the proxy category classifier")

    tr = sub.add_parser("train-rec", help="train a ranking model")
    tr.add_argument("--model", choices=["bpr", "vbpr", "dvbpr"], required=True)
    tr.add_argument("--epochs", type=int, dest="epochs_override")
    tr.add_argument("--reg-lambda", type=float, dest="reg_lambda")

    tg = sub.add_parser("train-gan", help="train the conditional GAN")
    tg.add_argument("--epochs", type=int, dest="gan_epochs")
    tg.add_argument("--batch", type=int, dest="gan_batch_desk")

    ea = sub.add_parser("eval-auc", help="evaluate ranking AUC")
    ea.add_argument("--setting", choices=["all", "cold"], default="all")
    ea.add_argument("--scorer", action="append", default=None,
                    help="rand|pop|visrank|bpr|vbpr|dvbpr (repeatable)")

    cs = sub.add_parser("compare-sources", help="four-source comparison table")
    cs.add_argument("--trials", type=int, default=100)
    cs.add_argument("--k", type=int, default=3)

    ds = sub.add_parser("design", help="synthesize personalized designs")
    ds.add_argument("--user", required=True)
    ds.add_argument("--category", type=int, required=True)
    ds.add_argument("--eta", type=float, default=None)
    ds.add_argument("--m", type=int, default=None)
    ds.add_argument("--k", type=int, default=None)
    ds.add_argument("--mode", choices=["rank", "sample"], default="rank")

    tl = sub.add_parser("tailor", help="invert a prototype and adjust it")
    tl.add_argument("--user", required=True)
    tl.add_argument("--category", type=int, required=True)
    tl.add_argument("--item")
    tl.add_argument("--image")
    tl.add_argument("--iterations", type=int, default=None)

    sv = sub.add_parser("serve", help="run the HTTP design service")
    sv.add_argument("--host")
    sv.add_argument("--port", type=int)
    sv.add_argument("--workers", type=int)
    return p


def main(argv: list[str] | None = None) -> int:
    _ensure_single_thread()
    args = build_parser().parse_args(argv)
    from .config import RunConfig
    field_names = {f.name for f in dataclasses.fields(RunConfig)}
    overrides = {k: v for k, v in vars(args).items() if k in field_names}
    try:
        cfg = RunConfig.load(args.config, overrides)
        os.makedirs(cfg.out_dir, exist_ok=True)
        if args.command == "synth-data":
            report = cmd_synth_data(cfg)
        elif args.command == "train-classifier":
            report = cmd_train_classifier(cfg)
        elif args.command == "train-rec":
            if args.epochs_override:
                if args.model == "dvbpr":
                    cfg.dvbpr_epochs = args.epochs_override
                else:
                    cfg.mf_epochs = args.epochs_override
            report = cmd_train_rec(cfg, args.model)
        elif args.command == "train-gan":
            report = cmd_train_gan(cfg)
        elif args.command == "eval-auc":
            scorers = args.scorer or ["rand", "pop"]
            report = cmd_eval_auc(cfg, scorers, args.setting)
        elif args.command == "compare-sources":
            report = cmd_compare_sources(cfg, args.trials, args.k)
        elif args.command == "design":
            report = cmd_design(cfg, args.user, args.category,
                                args.eta if args.eta is not None else cfg.design_eta,
                                args.m or cfg.design_starts, args.k or cfg.design_k,
                                args.mode)
        elif args.command == "tailor":
            report = cmd_tailor(cfg, args.user, args.category, args.item,
                                args.image,
                                args.iterations or cfg.design_iterations)
        elif args.command == "serve":
            report = cmd_serve(cfg)
        else:
            raise ValueError(f"unknown command {args.command}")
    except Exception as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    if args.command != "serve":
        _finish(cfg, args.command, report)
    return 0


if __name__ == "__main__":
    sys.exit(main())
