"""Regenerates the demo project under fixtures/demo.

Images are small synthetic scenes (a figure and a robot box). Captions for
the mock VLM are scripted per image, keyed by the SHA-256 of the original
PNG bytes.
"""

import hashlib
import json
import math
from pathlib import Path

from PIL import Image, ImageDraw

ROOT = Path(__file__).parent / "demo"
W, H = 160, 120


def scene(person_x, arm_angle, lean, robot_x, tint):
    img = Image.new("RGB", (W, H), (200 + tint % 40, 210, 220 - tint % 30))
    d = ImageDraw.Draw(img)
    d.rectangle([0, 95, W, H], fill=(120, 110, 100))
    # robot
    d.rectangle([robot_x, 70, robot_x + 26, 95], fill=(60, 60, 70))
    d.ellipse([robot_x + 8, 62, robot_x + 18, 72], fill=(200, 40, 40))
    # person
    hx, hy = person_x + lean, 30
    d.ellipse([hx - 6, hy - 6, hx + 6, hy + 6], fill=(240, 200, 170))
    d.line([hx, hy + 6, person_x, 70], fill=(30, 30, 120), width=4)
    d.line([person_x, 70, person_x - 8, 95], fill=(30, 30, 30), width=3)
    d.line([person_x, 70, person_x + 8, 95], fill=(30, 30, 30), width=3)
    a = math.radians(arm_angle)
    sx, sy = hx + (person_x - hx) * 0.3, 45
    d.line([sx, sy, sx + 22 * math.cos(a), sy + 22 * math.sin(a)], fill=(240, 200, 170), width=3)
    d.line([sx, sy, sx - 10, sy + 18], fill=(240, 200, 170), width=3)
    return img


def save(dir_, name, img):
    dir_.mkdir(parents=True, exist_ok=True)
    path = dir_ / name
    img.save(path, format="PNG", optimize=False)
    return hashlib.sha256(path.read_bytes()).hexdigest()


REF_POSE = [
    "Standing upright with arms relaxed at the sides, head turned toward you.",
    "Standing with the torso turned toward you, right arm raised to chest height.",
    "Leaning forward slightly, head oriented toward you, right hand extended.",
    "Standing upright, head following you as you pass, arms lowered.",
    "Standing with the back partly turned, head oriented away from you, arms at rest.",
]
REF_CONTEXT = [
    "Yes, the person notices you and steps aside to make room for you to pass.",
    "Yes, the person greets you with a small wave as you come closer.",
    "Yes, the person reaches toward you as if to hand you something.",
    "Yes, the person watches you drive past without moving.",
    "No, the person has turned back to what they were doing before.",
]
REF_EGO = [
    "You drive forward toward the person at walking speed.",
    "You slow down and turn slightly to the left.",
    "You stop for a moment beside the person, then continue.",
    "You drive away from the person and leave the frame.",
]

VIDEO_POSE = [
    "Standing still with both hands holding a cup at waist height, head down.",
    "Standing still, head turning toward you, both hands on the cup.",
    REF_POSE[0],
    "Taking a step toward you, cup held in the right hand, head toward you.",
    "Walking toward you with the right arm bent, cup held in front.",
    "Standing close to you, right arm extended with the cup, head toward you.",
    "Bending slightly at the waist, right arm fully extended toward you.",
    "Standing close, right hand opening above you, head oriented down at you.",
    "Standing with the right hand withdrawn, palm open, head toward you.",
    "Kneeling with one knee down and both hands resting on the thigh, head tilted to the side.",
    "Standing upright, arms loose, head oriented toward you.",
    "Turning the torso away from you, head still glancing back.",
    "Walking away from you with arms swinging, head oriented away.",
]
VIDEO_CONTEXT = [
    "No, the person is looking at the cup in their hands and has not noticed you.",
    "Not yet, the person seems to have just noticed you arriving.",
    "No, the person keeps holding the cup close and does not engage.",
    "Yes, the person is approaching you while holding the cup.",
    "Yes, the person is bringing the cup over to you.",
    "Yes, the person is offering the cup to you.",
    "Yes, the person is placing the cup onto you.",
    "Yes, the person is letting go of the cup so that you carry it.",
    "Yes, the person has handed you the cup and is checking it is stable.",
    REF_CONTEXT[0],
    "Yes, the person watches you carry the cup away.",
    "No, the person is turning away after the handover.",
    "No, the person is leaving and no longer pays attention to you.",
]


def main():
    script = {}

    ref_dir = ROOT / "storyboards" / "driveby"
    frames = []
    for i in range(5):
        img = scene(60 + 4 * i, -60 + 25 * i, (i % 3) - 1, 10 + 28 * i, 7 * i)
        name = f"slot{i}.png"
        h = save(ref_dir, name, img)
        script[h] = {"pose": REF_POSE[i], "context": REF_CONTEXT[i]}
        frames.append({"file": name, "t_ms": i * 1000})
    (ref_dir / "frames.json").write_text(
        json.dumps({"id": "driveby", "frames": frames, "ego_motion": REF_EGO}, indent=2) + "\n"
    )

    vid_dir = ROOT / "videos" / "offer_release"
    frames = []
    ego = []
    for e in range(25):
        t = e * 250
        k = e / 2
        img = scene(40 + int(3 * k), -20 + int(9 * k), int(k) % 3 - 1, 110 - int(2 * k), 3 * e)
        name = f"frame{e:03d}.png"
        h = save(vid_dir, name, img)
        s = e // 2
        if e % 2 == 0:
            script[h] = {"pose": VIDEO_POSE[s], "context": VIDEO_CONTEXT[s]}
        else:
            script[h] = {"pose": VIDEO_POSE[s] + " Slightly blurred.", "context": VIDEO_CONTEXT[s]}
        frames.append({"file": name, "t_ms": t})
        if e < 24:
            ego.append("You wait in place." if e < 10 else ("You hold still while the cup is placed." if e < 16 else "You reverse slowly."))
    (vid_dir / "frames.json").write_text(
        json.dumps({"id": "offer_release", "frames": frames, "ego_motion": ego}, indent=2) + "\n"
    )

    wave_dir = ROOT / "videos" / "short_wave"
    frames = []
    for i, t in enumerate([0, 430, 980, 1510, 2040, 2500]):
        img = scene(80, -80 + 30 * (i % 2), 0, 20, 11 * i)
        name = f"w{i}.png"
        save(wave_dir, name, img)
        frames.append({"file": name, "t_ms": t})
    (wave_dir / "frames.json").write_text(
        json.dumps({"id": "short_wave", "frames": frames, "ego_motion": []}, indent=2) + "\n"
    )

    (ROOT / "mock_captions.json").write_text(json.dumps(script, indent=2, sort_keys=True) + "\n")


if __name__ == "__main__":
    main()
