"""One 133-point whole-body frame and its 27-node reduction.

Writes reduce_frame.txt: a line `133 27`, 133 input rows `x y`, then 27 output
rows. Coordinates are dyadic so the text round-trips exactly. The node order
is restated from the keypoint layout: nose, shoulders, elbows, wrists, then
base and tip of each finger, left hand before right.
"""

body = [0, 5, 6, 7, 8, 9, 10]
fingers = [(2, 4), (5, 8), (9, 12), (13, 16), (17, 20)]
hands = [root + k for root in (91, 112) for pair in fingers for k in pair]
keep = body + hands

frame = [((k * 37) % 101 / 8.0, (k * 53) % 97 / 16.0 - 3.0) for k in range(133)]

with open("reduce_frame.txt", "w") as f:
    f.write(f"133 {len(keep)}\n")
    for x, y in frame:
        f.write(f"{x!r} {y!r}\n")
    for k in keep:
        x, y = frame[k]
        f.write(f"{x!r} {y!r}\n")
