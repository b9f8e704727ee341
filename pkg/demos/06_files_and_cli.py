"""
Weights files and the command line
==================================

Round-trips a model through the ESDW weights format, then drives the
``esdnet`` command line in-process: synth -> infer -> eval.
"""

import os
import tempfile

import numpy as np

from esdnet.cli import main
from esdnet.io import load_weights, save_weights
from esdnet.model import ModelConfig, build_model

work = tempfile.mkdtemp(prefix="esdnet-demo-")
model = build_model(ModelConfig("large", width_div=8), seed=2)
path = os.path.join(work, "model.esdw")
save_weights(model, path)
back = load_weights(path)
print("variant recovered from file:", back.config)
print("bit-exact:", all(np.array_equal(model[k], back[k]) for k in model.params))

data = os.path.join(work, "pairs")
main(["synth", "--n", "3", "--hw", "64x64", "--seed", "7", "--out", data])
main(["infer", "--weights", path, "--in", os.path.join(data, "0000_moire.png"),
      "--out", os.path.join(work, "restored.png")])
main(["eval", "--weights", path, "--data", data, "--report", os.path.join(work, "report.csv")])
print(open(os.path.join(work, "report.csv")).read())

# a wrong config is reported on one line with a nonzero exit code
print("exit code:", main(["train", "--data", data, "--out-weights", os.path.join(work, "x.esdw"),
                          "--set", "train.lr=1"]))
