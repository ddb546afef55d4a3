"""Generate the LeNet-style fixture (lenet.spwt, lenet.arch.json, lenet.spds).

Trains a small bias-free CNN on synthetic 12x12 stroke images with four
classes (horizontal, vertical, diagonal, anti-diagonal) and writes the
weights, architecture manifest and a held-out evaluation set.

    python3 gen_lenet.py [output_dir]

Requires numpy and torch. Output is deterministic for a given torch build.
"""

import json
import struct
import sys
from pathlib import Path

import numpy as np
import torch
from torch import nn

SIZE = 12
CLASSES = 4
SEED = 20180611


def stroke(rng, label):
    img = np.zeros((SIZE, SIZE), dtype=np.float32)
    length = rng.integers(6, SIZE + 1)
    start = rng.integers(0, SIZE - length + 1)
    offset = rng.integers(1, SIZE - 1)
    for t in range(length):
        p = start + t
        if label == 0:
            r, c = offset, p
        elif label == 1:
            r, c = p, offset
        elif label == 2:
            r, c = p, p
        else:
            r, c = p, SIZE - 1 - p
        img[r, c] = 1.0
    if label >= 2:
        shift = rng.integers(-3, 4)
        img = np.roll(img, shift, axis=1)
        if shift > 0:
            img[:, :shift] = 0.0
        elif shift < 0:
            img[:, shift:] = 0.0
    img += rng.normal(0.0, 0.35, size=img.shape).astype(np.float32)
    return img


def make_set(rng, n):
    labels = rng.integers(0, CLASSES, size=n)
    images = np.stack([stroke(rng, int(l)) for l in labels])[:, None, :, :]
    return images.astype(np.float32), labels.astype(np.int64)


class LeNet(nn.Module):
    def __init__(self):
        super().__init__()
        self.conv1 = nn.Conv2d(1, 6, 3, bias=False)
        self.conv2 = nn.Conv2d(6, 12, 3, bias=False)
        self.fc1 = nn.Linear(12 * 3 * 3, 32, bias=False)
        self.fc2 = nn.Linear(32, CLASSES, bias=False)

    def forward(self, x):
        x = torch.max_pool2d(torch.relu(self.conv1(x)), 2, 2)
        x = torch.relu(self.conv2(x))
        x = torch.relu(self.fc1(x.flatten(1)))
        return self.fc2(x)


def write_spwt(path, layers):
    out = bytearray(b"SPWT")
    out += struct.pack("<BI", 1, len(layers))
    for name, kind, array in layers:
        raw = name.encode("utf-8")
        out += struct.pack("<H", len(raw)) + raw
        out += struct.pack("<BB", kind, array.ndim)
        out += struct.pack(f"<{array.ndim}I", *array.shape)
        out += array.astype("<f4").tobytes()
    path.write_bytes(bytes(out))


def write_spds(path, images, labels):
    shape = images.shape[1:]
    out = bytearray(b"SPDS")
    out += struct.pack("<BIB", 1, len(labels), len(shape))
    out += struct.pack(f"<{len(shape)}I", *shape)
    out += struct.pack("<I", CLASSES)
    for img, label in zip(images, labels):
        out += img.astype("<f4").tobytes() + struct.pack("<H", int(label))
    path.write_bytes(bytes(out))


def main():
    out_dir = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(__file__).parent
    rng = np.random.default_rng(SEED)
    torch.manual_seed(SEED)

    train_x, train_y = make_set(rng, 4000)
    test_x, test_y = make_set(rng, 400)

    net = LeNet()
    opt = torch.optim.Adam(net.parameters(), lr=3e-3)
    tx, ty = torch.from_numpy(train_x), torch.from_numpy(train_y)
    for epoch in range(25):
        perm = torch.randperm(len(ty))
        for i in range(0, len(ty), 64):
            idx = perm[i : i + 64]
            opt.zero_grad()
            loss = nn.functional.cross_entropy(net(tx[idx]), ty[idx])
            loss.backward()
            opt.step()

    with torch.no_grad():
        acc = (net(torch.from_numpy(test_x)).argmax(1).numpy() == test_y).mean()
    print(f"held-out accuracy: {acc:.4f}")

    conv, fc = 0, 1
    layers = [
        ("conv1", conv, net.conv1.weight.detach().numpy()),
        ("conv2", conv, net.conv2.weight.detach().numpy()),
        ("fc1", fc, net.fc1.weight.detach().numpy()),
        ("fc2", fc, net.fc2.weight.detach().numpy()),
    ]
    write_spwt(out_dir / "lenet.spwt", layers)
    write_spds(out_dir / "lenet.spds", test_x, test_y)
    manifest = {
        "layers": [
            {"type": "conv2d", "weights": "conv1", "stride": 1, "padding": "valid"},
            {"type": "relu"},
            {"type": "max_pool2d", "window": 2, "stride": 2},
            {"type": "conv2d", "weights": "conv2", "stride": 1, "padding": "valid"},
            {"type": "relu"},
            {"type": "flatten"},
            {"type": "dense", "weights": "fc1"},
            {"type": "relu"},
            {"type": "dense", "weights": "fc2"},
        ]
    }
    (out_dir / "lenet.arch.json").write_text(json.dumps(manifest, indent=2) + "\n")


if __name__ == "__main__":
    main()
