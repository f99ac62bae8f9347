"""Cross-user transfer: pretrain without the evaluated user, fine-tune on that user's 3 examples per class.

    python3 scripts/run_transfer.py --users 0 4 8 --out out/transfer.csv
"""
import argparse

from magsense import evalharness as eh

MODEL = "encoder+max-margin"


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--users", type=int, nargs="+", default=[0, 4, 8])
    ap.add_argument("--tasks", nargs="+", default=["face8", "scratch9"])
    ap.add_argument("--n-users", type=int, default=9, help="size of the synthetic user pool")
    ap.add_argument("--out", default="out/transfer.csv")
    args = ap.parse_args()

    points = {}
    for user in args.users:
        others = tuple(u for u in range(args.n_users) if u != user)
        for task in args.tasks:
            spec = eh.ExperimentSpec(task=task, user_id=user, pretrain_users=others, models=(MODEL,))
            acc = eh.run_grid(spec).mean(MODEL)
            points[f"{task}/user{user}"] = acc
            print(f"{task} held-out user {user}: {acc:.4f}", flush=True)
    print("wrote", eh.write_plot_csv(args.out, "task_user", "accuracy", points))


if __name__ == "__main__":
    main()
