"""Verify the analytic gradients of the full model against finite differences.

Builds a small random graph, runs one training-mode forward pass with frozen
noise, and compares the tape gradients of every parameter group with a central
finite-difference estimate.
"""

from envgnn.gradcheck import run_gradcheck


def main():
    for backbone in ("gcn", "gat"):
        result = run_gradcheck(backbone=backbone, seed=0)
        status = "ok" if result["passed"] else "FAILED"
        print(f"{backbone}: max relative error "
              f"{result['max_relative_error']:.3e} ({status})")
        for name in sorted(result["errors"]):
            print(f"  {name:16s} {result['errors'][name]:.3e}")


if __name__ == "__main__":
    main()
