"""
Encoding C-ITS envelopes
========================

Every message carries the producer id, a per-producer sequence number and
the origin timestamp. Those three fields form the key used later to match
what was sent against what arrived.
"""

from edgebench.cits import CitsMessage, decode_message, encode_message, generate_payload, payload_seed

payload = generate_payload(payload_seed(42, 1, 0), 1280)
msg = CitsMessage(producer_id=1, sequence=0, origin_time_ms=1_700_000_000_000, payload=payload, topic="mec-1/cits")

frame = encode_message(msg)
print("frame bytes:", len(frame))  # 27 fixed + 10 topic + 1280 payload
print("header:", frame[:27].hex(" "))

back = decode_message(frame)
print("round trip ok:", back == msg)
print("join key:", back.key)
