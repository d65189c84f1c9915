"""Stand-alone scalar oracle for the evidence -> intent arithmetic.

Written against the published prior rows and axis constants only; imports
nothing from the package so it can cross-check it.  Run directly to print
the frozen values used in the test-suite.
"""
import math

MAP_W = 1.32
MAP_E = (0.90, 0.90, 0.90)
KAPPA = (6.7310, 6.7041, 3.1326)
TAU = (1.3077, 1.3147, 0.8558)


def sigmoid(x):
    return 1.0 / (1.0 + math.exp(-x))


def maps_intent(n_maps, conf=1.0):
    out = []
    for axis in range(3):
        s = 0.0
        for _ in range(n_maps):
            s += MAP_W * conf * MAP_E[axis]
        s = min(s, KAPPA[axis])
        out.append(sigmoid(s / TAU[axis]))
    return tuple(out)


def uncapped_net(n_maps):
    return sigmoid(n_maps * MAP_W * MAP_E[0] / TAU[0])


if __name__ == "__main__":
    print("empty", maps_intent(0))
    print("one map", maps_intent(1))
    print("ten maps", maps_intent(10))
    print("ten maps uncapped net", uncapped_net(10))
    print("sigma(6.7310/1.3077)", sigmoid(6.7310 / 1.3077))
    print("p75 1.3863 -> tau", 1.3863 / math.log(4))
    print("0.1..10 tau", 7.5 / math.log(4))
