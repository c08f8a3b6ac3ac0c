#!/usr/bin/env python3
"""Fit toy demonstration weights for the person classifier and the action
net on synthetic scenes, and export them as weight bundles.

This is an offline development tool: the package itself only runs inference.
Training uses torch; the exported bundles are verified against the package's
own forward pass before being written (tests/data/*.w4db).

Usage: python tools/fit_toy_weights.py [--out-dir tests/data] [--quick]
"""

import argparse
import sys
import time
from pathlib import Path

import numpy as np
import torch
import torch.nn as tnn

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from voxtrack.action_net import (ActionState, action_arch, action_step,
                                 classify_sequence)
from voxtrack.carving import (CROP_DIMS, GridSpec, apply_topdown_mask, carve,
                              crop_person, inject_points, ProjectionTables)
from voxtrack.geometry import look_at_camera, unproject
from voxtrack.nn import WeightBundle, save_weights
from voxtrack.people_net import classify_person, people_arch
from voxtrack.simulator import (box, ground_truth_occupancy,
                                person_primitives, render_depth, room_shell)

ROOM = 10.1
DESK_SPEC = GridSpec(origin=(0.0, 0.0, 0.0), voxel_size=0.1, dims=(101, 101, 43))
GESTURE_CLASSES = (0, 1, 2)  # arm down / raised / forward


def rig(width=320, height=264):
    k = np.array([[228.0, 0.0, (width - 1) / 2],
                  [0.0, 228.0, (height - 1) / 2],
                  [0.0, 0.0, 1.0]])
    eyes = [(0.4, 0.4, 2.3), (ROOM - 0.4, 0.4, 2.4),
            (ROOM - 0.4, ROOM - 0.4, 2.2), (0.4, ROOM - 0.4, 2.5)]
    return [look_at_camera(f"cam{i}", eye, (ROOM / 2, ROOM / 2, 0.9), k,
                           width, height, 0.4, 16.0) for i, eye in enumerate(eyes)]


class CarvePipeline:
    def __init__(self):
        self.cams = rig()
        self.tables = ProjectionTables.build(DESK_SPEC, self.cams)
        self.rays = [c.ray_directions() for c in self.cams]
        self.shell = room_shell(ROOM, ROOM)

    def crop(self, prims, column):
        prims = self.shell + list(prims)
        depths = [render_depth(prims, c, rays=r)
                  for c, r in zip(self.cams, self.rays)]
        clouds = [unproject(d, c, r)
                  for d, c, r in zip(depths, self.cams, self.rays)]
        grid = carve(DESK_SPEC, self.cams, depths, tables=self.tables, workers=2)
        grid = apply_topdown_mask(grid, np.concatenate(clouds))
        grid = inject_points(grid, clouds)
        return crop_person(grid, column)


def analytic_crop(prims, center_xy):
    spec = GridSpec(origin=(center_xy[0] - 1.5, center_xy[1] - 1.5, 0.0),
                    voxel_size=0.1, dims=CROP_DIMS)
    return ground_truth_occupancy(prims, spec).occupancy


def sample_person(rng, x, y):
    return person_primitives(
        x, y, rng.uniform(0, 2 * np.pi), int(rng.integers(0, 4)),
        radius=rng.uniform(0.18, 0.26), height=rng.uniform(1.5, 1.9))


def sample_box(rng, x, y):
    ex, ey = rng.uniform(0.4, 1.3, 2)
    ez = rng.uniform(0.3, 1.2)
    return [box((x, y, ez / 2), (ex, ey, ez), yaw=rng.uniform(0, np.pi))]


def people_dataset(rng, count, pipe):
    """Half persons, half furniture; alternating analytic and carved crops."""
    volumes, labels = [], []
    for i in range(count):
        is_person = i % 2 == 0
        x, y = rng.uniform(3.0, ROOM - 3.0, 2)
        prims = sample_person(rng, x, y) if is_person else sample_box(rng, x, y)
        if i % 4 < 2:
            vol = analytic_crop(prims, (x, y))
        else:
            column = DESK_SPEC.world_to_voxel(np.array([[x, y, 0.0]]))[0][:2]
            vol = pipe.crop(prims, column)
        volumes.append(vol)
        labels.append(1 if is_person else 0)
    return np.stack(volumes).astype(np.float32), np.array(labels)


class TorchPeopleNet(tnn.Module):
    def __init__(self):
        super().__init__()
        self.conv1 = tnn.Conv3d(1, 8, 3, padding=1)
        self.conv2 = tnn.Conv3d(8, 16, 3, padding=1)
        self.conv3 = tnn.Conv3d(16, 32, 3, padding=1)
        self.pool = tnn.MaxPool3d(2)
        self.fc1 = tnn.Linear(32, 16)
        self.fc2 = tnn.Linear(16, 2)

    def forward(self, x):
        x = self.pool(torch.relu(self.conv1(x)))
        x = self.pool(torch.relu(self.conv2(x)))
        x = torch.relu(self.conv3(x))
        x = x.amax(dim=(2, 3, 4))
        return self.fc2(torch.relu(self.fc1(x)))


def export_people(model) -> WeightBundle:
    sd = {k: v.detach().numpy().astype(np.float32) for k, v in model.state_dict().items()}
    tensors = {
        "conv1.weight": sd["conv1.weight"], "conv1.bias": sd["conv1.bias"],
        "conv2.weight": sd["conv2.weight"], "conv2.bias": sd["conv2.bias"],
        "conv3.weight": sd["conv3.weight"], "conv3.bias": sd["conv3.bias"],
        "head.0.weight": sd["fc1.weight"], "head.0.bias": sd["fc1.bias"],
        "head.1.weight": sd["fc2.weight"], "head.1.bias": sd["fc2.bias"],
    }
    return WeightBundle(tensors=tensors, arch=people_arch())


def fit_people(out_dir, quick, pipe):
    rng = np.random.default_rng(101)  # training draw; tests hold out other seeds
    count = 80 if quick else 200
    print(f"[people] generating {count} training crops ...")
    volumes, labels = people_dataset(rng, count, pipe)
    x = torch.from_numpy(volumes[:, None])
    y = torch.from_numpy(labels)

    torch.manual_seed(0)
    model = TorchPeopleNet()
    opt = torch.optim.Adam(model.parameters(), lr=2e-3)
    sched = torch.optim.lr_scheduler.StepLR(opt, step_size=12, gamma=0.3)
    loss_fn = tnn.CrossEntropyLoss()
    epochs = 8 if quick else 30
    for epoch in range(epochs):
        perm = torch.randperm(len(x))
        total = 0.0
        for i in range(0, len(x), 16):
            idx = perm[i:i + 16]
            opt.zero_grad()
            loss = loss_fn(model(x[idx]), y[idx])
            loss.backward()
            opt.step()
            total += float(loss.detach()) * len(idx)
        sched.step()
        with torch.no_grad():
            acc = float((model(x).argmax(1) == y).float().mean())
        print(f"[people] epoch {epoch + 1}/{epochs} loss {total / len(x):.4f} "
              f"train acc {acc:.3f}")
    bundle = export_people(model)

    # parity: exported bundle must reproduce the torch probabilities
    with torch.no_grad():
        torch_probs = torch.softmax(model(x[:8]), dim=1)[:, 1].numpy()
    ours = np.array([classify_person(volumes[i] > 0.5, bundle) for i in range(8)])
    gap = np.abs(torch_probs - ours).max()
    print(f"[people] torch/package parity gap: {gap:.2e}")
    assert gap < 1e-4, "exported people bundle does not match the torch model"

    path = Path(out_dir) / "people_toy.w4db"
    save_weights(path, bundle)
    print(f"[people] wrote {path}")


class TorchActionNet(tnn.Module):
    def __init__(self, hidden=64, feat=32, n_actions=16):
        super().__init__()
        self.conv1 = tnn.Conv3d(1, 8, 3, padding=1)
        self.conv2 = tnn.Conv3d(8, 16, 3, padding=1)
        self.conv3 = tnn.Conv3d(16, feat, 3, padding=1)
        self.convg = tnn.Conv3d(feat, feat, 3, padding=1)
        self.pool = tnn.MaxPool3d(2)
        self.u = tnn.Parameter(torch.randn(hidden, feat) * 0.05)
        self.lstm = tnn.LSTMCell(2 * feat, hidden)
        self.fc1 = tnn.Linear(hidden, 32)
        self.fc2 = tnn.Linear(32, n_actions)
        self.hidden = hidden

    def features(self, x):
        x = self.pool(torch.relu(self.conv1(x)))
        x = self.pool(torch.relu(self.conv2(x)))
        v = torch.relu(self.conv3(x))
        g = torch.relu(self.convg(v)).amax(dim=(2, 3, 4))
        return v, g

    def forward_sequence(self, seq):
        """seq: (T, B, 1, L, W, H) -> logits (T, B, n_actions)."""
        b = seq.shape[1]
        h = torch.zeros(b, self.hidden)
        c = torch.zeros(b, self.hidden)
        logits = []
        for t in range(seq.shape[0]):
            v, g = self.features(seq[t])
            beta = torch.einsum("bd,df,bflwh->blwh", h, self.u, v)
            alpha = torch.softmax(beta.flatten(1), dim=1).reshape(beta.shape)
            pooled = torch.einsum("bflwh,blwh->bf", v, alpha)
            h, c = self.lstm(torch.cat([pooled, g], dim=1), (h, c))
            logits.append(self.fc2(torch.relu(self.fc1(h))))
        return torch.stack(logits)


def export_action(model) -> WeightBundle:
    sd = {k: v.detach().numpy().astype(np.float32) for k, v in model.state_dict().items()}
    tensors = {
        "conv1.weight": sd["conv1.weight"], "conv1.bias": sd["conv1.bias"],
        "conv2.weight": sd["conv2.weight"], "conv2.bias": sd["conv2.bias"],
        "conv3.weight": sd["conv3.weight"], "conv3.bias": sd["conv3.bias"],
        "convg.weight": sd["convg.weight"], "convg.bias": sd["convg.bias"],
        "attn.U": sd["u"],
        "lstm.w_x": sd["lstm.weight_ih"], "lstm.w_h": sd["lstm.weight_hh"],
        "lstm.b": sd["lstm.bias_ih"] + sd["lstm.bias_hh"],
        "head.0.weight": sd["fc1.weight"], "head.0.bias": sd["fc1.bias"],
        "head.1.weight": sd["fc2.weight"], "head.1.bias": sd["fc2.bias"],
    }
    return WeightBundle(tensors=tensors, arch=action_arch())


def gesture_sequence(rng, pipe, action, frames):
    """One person holding a gesture while drifting slightly; carved crops."""
    x, y = rng.uniform(3.0, ROOM - 3.0, 2)
    yaw = rng.uniform(0, 2 * np.pi)
    radius = rng.uniform(0.18, 0.26)
    height = rng.uniform(1.5, 1.9)
    crops = []
    for _ in range(frames):
        x += rng.uniform(-0.06, 0.06)
        y += rng.uniform(-0.06, 0.06)
        yaw += rng.uniform(-0.1, 0.1)
        prims = person_primitives(x, y, yaw, action, radius=radius, height=height)
        column = DESK_SPEC.world_to_voxel(np.array([[x, y, 0.0]]))[0][:2]
        crops.append(pipe.crop(prims, column))
    return np.stack(crops).astype(np.float32)


def fit_action(out_dir, quick, pipe):
    rng = np.random.default_rng(202)
    n_seq = 2 if quick else 8
    frames = 6 if quick else 10
    print(f"[action] generating {n_seq * len(GESTURE_CLASSES)} carved "
          f"sequences of {frames} frames ...")
    t0 = time.time()
    seqs, labels = [], []
    for action in GESTURE_CLASSES:
        for _ in range(n_seq):
            seqs.append(gesture_sequence(rng, pipe, action, frames))
            labels.append(action)
    print(f"[action] data ready in {time.time() - t0:.0f}s")
    x = torch.from_numpy(np.stack(seqs)).permute(1, 0, 2, 3, 4)[:, :, None]
    y = torch.from_numpy(np.array(labels))

    torch.manual_seed(1)
    model = TorchActionNet()
    opt = torch.optim.Adam(model.parameters(), lr=2e-3)
    sched = torch.optim.lr_scheduler.StepLR(opt, step_size=40, gamma=0.3)
    loss_fn = tnn.CrossEntropyLoss()
    epochs = 10 if quick else 80
    for epoch in range(epochs):
        opt.zero_grad()
        logits = model.forward_sequence(x)
        loss = loss_fn(logits.reshape(-1, logits.shape[-1]),
                       y.repeat(logits.shape[0]))
        loss.backward()
        opt.step()
        sched.step()
        acc = float((logits.argmax(-1) == y).float().mean())
        print(f"[action] epoch {epoch + 1}/{epochs} loss {float(loss.detach()):.4f} "
              f"per-frame train acc {acc:.3f}", flush=True)

    bundle = export_action(model)
    # parity on one training sequence
    with torch.no_grad():
        torch_logits = model.forward_sequence(x[:, :1])
        torch_probs = torch.softmax(torch_logits[:, 0], dim=-1).numpy()
    state = ActionState.initial()
    gaps = []
    for t in range(x.shape[0]):
        probs, state, _ = action_step(seqs[0][t] > 0.5, state, bundle)
        gaps.append(np.abs(probs - torch_probs[t]).max())
    print(f"[action] torch/package parity gap: {max(gaps):.2e}")
    assert max(gaps) < 1e-4, "exported action bundle does not match torch"

    labels_pred = classify_sequence(list(seqs[0] > 0.5), bundle)
    print(f"[action] sanity labels on a class-{labels[0]} sequence: {labels_pred}")
    path = Path(out_dir) / "action_toy.w4db"
    save_weights(path, bundle)
    print(f"[action] wrote {path}")


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--out-dir", default=str(Path(__file__).parent.parent
                                                 / "tests" / "data"))
    parser.add_argument("--quick", action="store_true",
                        help="tiny smoke-test fit (weights not committable)")
    args = parser.parse_args()
    Path(args.out_dir).mkdir(parents=True, exist_ok=True)
    torch.set_num_threads(2)
    pipe = CarvePipeline()
    fit_people(args.out_dir, args.quick, pipe)
    fit_action(args.out_dir, args.quick, pipe)


if __name__ == "__main__":
    main()
