"""Build (once) and serve a tiny trained fixture for the studio e2e tests.

Usage: python3 serve_fixture.py --port 8451 --dir /tmp/vpre-e2e
"""
import argparse
import json
import os
import sys

parser = argparse.ArgumentParser()
parser.add_argument("--port", type=int, default=8451)
parser.add_argument("--dir", required=True)
args = parser.parse_args()

os.environ.setdefault("OPENBLAS_NUM_THREADS", "1")
os.environ.setdefault("OMP_NUM_THREADS", "1")

from vpre.cli import main as vpre_main  # noqa: E402

out = args.dir
cfg_path = os.path.join(out, "cfg.json")
if not os.path.exists(os.path.join(out, "gan.vpre")):
    os.makedirs(out, exist_ok=True)
    with open(cfg_path, "w") as f:
        json.dump({
            "out_dir": out, "seed": 7, "image_side": 16, "latent_dim": 8,
            "classifier_epochs": 3, "feature_dim": 16,
            "dvbpr_epochs": 2, "dvbpr_batch": 32, "cnn_input_side": 32,
            "gan_side_desk": 16, "gan_batch_desk": 8, "gan_epochs": 3,
            "design_starts": 4, "design_k": 2, "design_iterations": 6,
        }, f)
    for cmd in (["synth-data", "--users", "12", "--items", "30", "--image-side", "16"],
                ["train-classifier"],
                ["train-rec", "--model", "dvbpr"],
                ["train-gan"]):
        code = vpre_main(["--config", cfg_path] + cmd)
        if code != 0:
            sys.exit(code)

from vpre.service import ServiceConfig, run_server  # noqa: E402

run_server(ServiceConfig(
    host="127.0.0.1", port=args.port, workers=1, snapshot_every=2,
    corpus_dir=os.path.join(out, "corpus"),
    dvbpr_checkpoint=os.path.join(out, "dvbpr.vpre"),
    gan_checkpoint=os.path.join(out, "gan.vpre"),
    classifier_checkpoint=os.path.join(out, "classifier.vpre"),
    results_dir=os.path.join(out, "results"),
    image_side=16))
