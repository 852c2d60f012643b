#!/usr/bin/env python3
"""Reference encoder for the finger wire protocol.

Writes one hex fixture per message type into golden/. Uses only struct and
zlib so it shares no code with the Rust encoder. Run from this directory:

    python3 gen_golden.py
"""

import struct
import zlib
from pathlib import Path

MAGIC = b"HF"
VERSION = 1


def frame(msg_type, finger_id, seq, timestamp_us, payload):
    head = MAGIC + struct.pack("<BBBIQH", VERSION, msg_type, finger_id, seq, timestamp_us, len(payload))
    body = head + payload
    return body + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF)


CASES = [
    # name, type, finger, seq, timestamp, payload, description
    ("hello", 0x01, 1, 0, 0, struct.pack("<BI", 1, 0xD3508483),
     "HELLO kind=index(1) geometry_hash=0xd3508483"),
    ("pose_telemetry", 0x02, 2, 41, 205_000, struct.pack("<iii", 1_200_000, -350_000, 6_283_185),
     "POSE_TELEMETRY angles_urad=[1200000, -350000, 6283185]"),
    ("motor_telemetry", 0x03, 3, 7, 350_000, struct.pack("<ii", 2_500_000, -2_500_000),
     "MOTOR_TELEMETRY spools_urad=[2500000, -2500000]"),
    ("set_motor_targets", 0x04, 4, 12, 1_000_000, struct.pack("<iiI", 3_000_000, -1_000_000, 4_000_000),
     "SET_MOTOR_TARGETS targets_urad=[3000000, -1000000] rate_limit=4000000"),
    ("set_joint_targets", 0x05, 0, 3, 2_500_000, struct.pack("<iii", 800_000, 666_667, -6_283_185),
     "SET_JOINT_TARGETS angles_urad=[800000, 666667, -6283185]"),
    ("touch_event", 0x06, 1, 0xFFFFFFFF, 2**63 + 5, struct.pack("<IB", 81_894, 1),
     "TOUCH_EVENT magnitude=81894 joint=1"),
    ("heartbeat", 0x07, 0, 0, 0, b"",
     "HEARTBEAT"),
    ("error", 0x08, 2, 9, 123_456, struct.pack("<H", 2) + "wrong finger: Ünïcode".encode("utf-8"),
     "ERROR code=2 text='wrong finger: Ünïcode'"),
    ("inject_touch", 0x09, 1, 5, 500_000, struct.pack("<iiI", 0, 20_000, 50),
     "INJECT_TOUCH force_un=[0, 20000] duration_ms=50"),
]


def hexdump(data):
    return "\n".join(" ".join(f"{b:02x}" for b in data[i:i + 16]) for i in range(0, len(data), 16))


def main():
    out = Path(__file__).resolve().parent / "golden"
    out.mkdir(exist_ok=True)
    for name, mtype, finger, seq, ts, payload, desc in CASES:
        data = frame(mtype, finger, seq, ts, payload)
        text = (f"# {desc}\n# finger_id={finger} seq={seq} timestamp_us={ts}\n"
                f"# {len(data)} bytes\n{hexdump(data)}\n")
        (out / f"{name}.hex").write_text(text, encoding="utf-8")


if __name__ == "__main__":
    main()
