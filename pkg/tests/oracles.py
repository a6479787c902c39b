"""Deliberately naive reference implementations used as test oracles."""

from fractions import Fraction


def brute_force_loss(sent, received):
    """Nested-loop join on (producer, origin, sequence); loss in percent."""
    distinct_sent = []
    for s in sent:
        if not any(s[0] == d[0] and s[1] == d[1] and s[2] == d[2] for d in distinct_sent):
            distinct_sent.append(s)
    found = 0
    for s in distinct_sent:
        for r in received:
            if s[0] == r[0] and s[1] == r[1] and s[2] == r[2]:
                found += 1
                break
    # exact rational, rounded once to the nearest float
    return float(Fraction(100) * (1 - Fraction(found, len(distinct_sent))))
