#!/usr/bin/env python3
"""Export convolutional weights into the safetensors layout read by promptlens.

    export_torch_weights.py vgg   out.safetensors   # torchvision VGG16 taps
    export_torch_weights.py lpips out.safetensors   # LPIPS (vgg) backbone + lin heads
    export_torch_weights.py fixture out_dir         # small random net + torch reference outputs

The first two need pretrained weights (torchvision / the `lpips` package) and
network access on first use. `fixture` only needs torch.
"""
import argparse
import hashlib
import json
import pathlib
import struct

import torch
import torch.nn.functional as F


def write_safetensors(path, tensors, metadata):
    header = {"__metadata__": metadata}
    blobs = []
    offset = 0
    for name in sorted(tensors):
        t = tensors[name].detach().to(torch.float32).contiguous().cpu()
        raw = t.numpy().tobytes()
        header[name] = {"dtype": "F32", "shape": list(t.shape), "data_offsets": [offset, offset + len(raw)]}
        blobs.append(raw)
        offset += len(raw)
    head = json.dumps(header, separators=(",", ":")).encode()
    head += b" " * (-len(head) % 8)
    data = struct.pack("<Q", len(head)) + head + b"".join(blobs)
    pathlib.Path(path).write_bytes(data)
    return hashlib.sha256(data).hexdigest()


VGG_TAPS = {3: "relu1_2", 8: "relu2_2", 15: "relu3_3", 22: "relu4_3", 29: "relu5_3"}


def vgg_layers(features, last):
    layers, tensors = [], {}
    for i, m in enumerate(features):
        if i > last:
            break
        if isinstance(m, torch.nn.Conv2d):
            name = f"features.{i}"
            layers.append({"op": "conv", "name": name, "stride": m.stride[0], "padding": m.padding[0]})
            tensors[name + ".weight"] = m.weight
            tensors[name + ".bias"] = m.bias
        elif isinstance(m, torch.nn.ReLU):
            layers.append({"op": "relu"})
        elif isinstance(m, torch.nn.MaxPool2d):
            layers.append({"op": "maxpool", "kernel": m.kernel_size, "stride": m.stride})
        if i in VGG_TAPS:
            layers.append({"op": "tap", "name": VGG_TAPS[i]})
    return layers, tensors


def export_vgg(out):
    import torchvision

    vgg = torchvision.models.vgg16(weights=torchvision.models.VGG16_Weights.IMAGENET1K_V1).features
    layers, tensors = vgg_layers(vgg, 15)
    arch = {"kind": "vgg_perceptual", "input": "unit", "shift": [0.485, 0.456, 0.406],
            "scale": [0.229, 0.224, 0.225], "layers": layers, "tap_weights": [1.0, 1.0, 1.0]}
    return write_safetensors(out, tensors, {"promptlens.arch": json.dumps(arch), "promptlens.name": "vgg16-imagenet"})


def export_lpips(out):
    import lpips

    import torchvision

    model = lpips.LPIPS(net="vgg", verbose=False)
    # lpips splits torchvision's VGG into five slices keyed by global index.
    full = torchvision.models.vgg16(weights=None).features
    full.load_state_dict(_merged_slices(model.net))
    layers, tensors = vgg_layers(full, 29)
    for i, lin in enumerate(model.lins):
        tensors[f"lin{i}.weight"] = lin.model[-1].weight
    arch = {"kind": "lpips", "input": "signed", "shift": model.scaling_layer.shift.flatten().tolist(),
            "scale": model.scaling_layer.scale.flatten().tolist(), "layers": layers}
    return write_safetensors(out, tensors, {"promptlens.arch": json.dumps(arch), "promptlens.name": "lpips-vgg-v0.1"})


def _merged_slices(net):
    merged = {}
    for s in range(1, 6):
        for key, value in getattr(net, f"slice{s}").state_dict().items():
            merged[key] = value
    return merged


def forward_taps(layers, tensors, x):
    taps = []
    for layer in layers:
        op = layer["op"]
        if op == "conv":
            n = layer["name"]
            x = F.conv2d(x, tensors[n + ".weight"], tensors[n + ".bias"], stride=layer["stride"],
                         padding=layer["padding"])
        elif op == "relu":
            x = F.relu(x)
        elif op == "maxpool":
            x = F.max_pool2d(x, layer["kernel"], layer["stride"])
        elif op == "tap":
            taps.append(x)
    return taps


def export_fixture(out_dir):
    out_dir = pathlib.Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    g = torch.Generator().manual_seed(20221023)
    tensors = {
        "features.0.weight": torch.randn(4, 3, 3, 3, generator=g) * 0.4,
        "features.0.bias": torch.randn(4, generator=g) * 0.1,
        "features.3.weight": torch.randn(6, 4, 3, 3, generator=g) * 0.3,
        "features.3.bias": torch.randn(6, generator=g) * 0.1,
        "lin0.weight": torch.rand(1, 4, 1, 1, generator=g),
        "lin1.weight": torch.rand(1, 6, 1, 1, generator=g),
    }
    layers = [
        {"op": "conv", "name": "features.0", "stride": 1, "padding": 1}, {"op": "relu"},
        {"op": "tap", "name": "relu1"}, {"op": "maxpool", "kernel": 2, "stride": 2},
        {"op": "conv", "name": "features.3", "stride": 1, "padding": 1}, {"op": "relu"},
        {"op": "tap", "name": "relu2"},
    ]
    shift = torch.tensor([-0.030, -0.088, -0.188])
    scale = torch.tensor([0.458, 0.448, 0.450])
    arch = {"kind": "lpips", "input": "signed", "shift": shift.tolist(), "scale": scale.tolist(), "layers": layers}
    write_safetensors(out_dir / "convnet_fixture.safetensors", tensors, {"promptlens.arch": json.dumps(arch)})

    images = [torch.randint(0, 256, (12, 10, 3), generator=g, dtype=torch.uint8) for _ in range(2)]

    def prep(img):
        x = img.permute(2, 0, 1).to(torch.float32).unsqueeze(0) / 127.5 - 1.0
        return (x - shift.view(1, 3, 1, 1)) / scale.view(1, 3, 1, 1)

    taps = [forward_taps(layers, tensors, prep(img)) for img in images]

    def normalize(t):
        return t / (torch.sqrt((t * t).sum(dim=1, keepdim=True)) + 1e-10)

    distance = 0.0
    for l in range(2):
        d = (normalize(taps[0][l]) - normalize(taps[1][l])) ** 2
        distance += (d * tensors[f"lin{l}.weight"]).sum(dim=1).mean().item()

    expected = {
        "width": 10, "height": 12,
        "images": [img.flatten().tolist() for img in images],
        "taps": [[{"shape": list(t.shape[1:]), "values": t.flatten().tolist()} for t in per_image] for per_image in taps],
        "lpips_distance": distance,
    }
    (out_dir / "convnet_fixture.json").write_text(json.dumps(expected) + "\n")


def main():
    parser = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("what", choices=["vgg", "lpips", "fixture"])
    parser.add_argument("out")
    args = parser.parse_args()
    torch.set_grad_enabled(False)
    if args.what == "fixture":
        export_fixture(args.out)
        return
    digest = export_vgg(args.out) if args.what == "vgg" else export_lpips(args.out)
    print(f"{args.out} sha256={digest}")


if __name__ == "__main__":
    main()
