"""Export torchvision ResNet-50 weights as a plain state dict readable from C++."""
import argparse

import torch
import torchvision


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("out", help="output file, e.g. resnet50.pt")
    parser.add_argument("--random", action="store_true", help="skip the ImageNet download")
    args = parser.parse_args()

    weights = None if args.random else torchvision.models.ResNet50_Weights.IMAGENET1K_V1
    model = torchvision.models.resnet50(weights=weights)
    state = {k: v.detach().clone() for k, v in model.state_dict().items() if not k.startswith("fc.")}
    torch.save(state, args.out)
    print(f"wrote {len(state)} tensors to {args.out}")


if __name__ == "__main__":
    main()
