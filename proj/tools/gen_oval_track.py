#!/usr/bin/env python3
"""Writes the bundled oval track CSV (two straights joined by semicircles, counter-clockwise)."""
import argparse
import math


def oval_points(straight, radius, spacing):
    pts = []
    n_straight = int(round(straight / spacing))
    n_arc = int(round(math.pi * radius / spacing))
    # bottom straight, heading +x
    for i in range(n_straight):
        pts.append((i * straight / n_straight, 0.0))
    # right semicircle, centre (straight, radius)
    for i in range(n_arc):
        a = -math.pi / 2 + i * math.pi / n_arc
        pts.append((straight + radius * math.cos(a), radius + radius * math.sin(a)))
    # top straight, heading -x
    for i in range(n_straight):
        pts.append((straight - i * straight / n_straight, 2 * radius))
    # left semicircle, centre (0, radius)
    for i in range(n_arc):
        a = math.pi / 2 + i * math.pi / n_arc
        pts.append((radius * math.cos(a), radius + radius * math.sin(a)))
    return pts


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--straight", type=float, default=12.0)
    ap.add_argument("--radius", type=float, default=4.0)
    ap.add_argument("--spacing", type=float, default=0.1)
    ap.add_argument("--half-width", type=float, default=1.5)
    ap.add_argument("out")
    args = ap.parse_args()
    with open(args.out, "w") as f:
        f.write("# oval: %.1f m straights, %.1f m radius, %.2f m half-width\n"
                % (args.straight, args.radius, args.half_width))
        f.write("x_m,y_m,w_tr_left_m,w_tr_right_m\n")
        for x, y in oval_points(args.straight, args.radius, args.spacing):
            f.write("%.6f,%.6f,%.3f,%.3f\n" % (x, y, args.half_width, args.half_width))


if __name__ == "__main__":
    main()
