"""Stand-in for the real database API, with the same surface.

Metric values are derived deterministically from (salt, arch, task, metric,
mode) so exports are reproducible and spot-checks can demand bit equality.
Loss metrics are positive (the exporter must negate them); everything else
lives in (0, 1).
"""

import hashlib
import itertools
import json

TASKS = ["class_scene", "class_object", "room_layout", "jigsaw",
         "segmentsemantic", "normal", "autoencoder"]

_METRICS = {
    "class_scene": "{split}_top1",
    "class_object": "{split}_top1",
    "jigsaw": "{split}_top1",
    "room_layout": "{split}_loss",   # plain loss: exporter negates
    "segmentsemantic": "{split}_mIoU",
    "normal": "{split}_ssim",
    "autoencoder": "{split}_ssim",
}


def _micro_strings():
    out = []
    for ops in itertools.product(range(4), repeat=6):
        a, b, c, d, e, f = ops
        out.append(f"64-41414-{a}_{b}{c}_{d}{e}{f}")
    return out


class TransNASBenchAPI:
    def __init__(self, db_path):
        with open(db_path, encoding="utf-8") as fh:
            self.salt = json.load(fh)["salt"]
        self.task_list = list(TASKS)
        self.all_arch_dict = {"micro": _micro_strings(), "macro": []}

    def _known_metrics(self, task):
        template = _METRICS[task]
        return {template.format(split=s) for s in ("train", "valid", "test")}

    def get_single_metric(self, arch, task, metric, mode="best"):
        if task not in self.task_list:
            raise KeyError(task)
        if metric not in self._known_metrics(task):
            raise KeyError(metric)
        digest = hashlib.sha256(
            f"{self.salt}|{arch}|{task}|{metric}|{mode}".encode()).digest()
        value = int.from_bytes(digest[:8], "big") / 2 ** 64
        if "loss" in metric:
            return 0.5 + value  # positive loss
        return value
