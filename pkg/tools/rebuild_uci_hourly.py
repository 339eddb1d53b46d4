"""Rebuild the UCI Bike Sharing ``hour.csv`` layout from a de-normalised copy.

The ``bikeshare-model`` wheel on PyPI ships the 17379 hourly records with
categorical strings and physical units (deg C, %, km/h) in shuffled order,
and with ``weekday`` / ``weathersit`` blanked in some rows. This script
inverts the unit transforms and writes the original UCI column layout,
sorted chronologically, so ``ctxdg.datagen.load_bike_sharing`` can read it.

Gaps are repaired as follows:

* ``weekday`` is recomputed from ``dteday`` (0 = Sunday) for every row.
* ``weathersit`` for 2011 is taken from the ISLP ``Bikeshare.csv`` copy
  (the 2011 half of the same file) when its wheel is given; every other
  shared column is cross-checked against it.
* remaining ``weathersit`` blanks (2012) take the value of the nearest
  observed hour of the same day. Their ``instant`` ids are written to
  ``<out>.imputed`` so they can be excluded.

Usage::

    python tools/rebuild_uci_hourly.py <bikeshare-wheel> <out.csv> [<islp-wheel>]
"""
import csv
import io
import sys
import zipfile
from datetime import date

SEASONS = {"spring": 1, "summer": 2, "fall": 3, "winter": 4}
WEEKDAYS = {"Sun": 0, "Mon": 1, "Tue": 2, "Wed": 3, "Thu": 4, "Fri": 5, "Sat": 6}
WEATHER = {"Clear": 1, "Mist": 2, "Light Rain": 3, "Heavy Rain": 4}
YES_NO = {"No": 0, "Yes": 1}
HEADER = ["instant", "dteday", "season", "yr", "mnth", "hr", "holiday",
          "weekday", "workingday", "weathersit", "temp", "atemp", "hum",
          "windspeed", "casual", "registered", "cnt"]


def _hour(text):
    if text == "12am":
        return 0
    if text == "12pm":
        return 12
    value = int(text[:-2])
    return value + 12 if text.endswith("pm") else value


def _fmt(value, digits):
    out = f"{round(value, digits):.{digits}f}".rstrip("0").rstrip(".")
    return out if out not in ("", "-0") else "0"


ISLP_WEATHER = {"clear": 1, "cloudy/misty": 2, "light rain/snow": 3,
                "heavy rain/snow": 4}


def read_source(path, member=".csv"):
    if path.endswith(".whl"):
        with zipfile.ZipFile(path) as zf:
            name = next(n for n in zf.namelist() if n.endswith(member))
            text = zf.read(name).decode()
    else:
        with open(path, newline="") as fh:
            text = fh.read()
    return list(csv.DictReader(io.StringIO(text)))


def convert(rows):
    out = []
    for row in rows:
        day = date.fromisoformat(row["dteday"])
        casual, registered = int(row["casual"]), int(row["registered"])
        if casual + registered != int(row["cnt"]):
            raise ValueError(f"inconsistent counts on {row['dteday']} {row['hr']}")
        if row["weekday"] and WEEKDAYS[row["weekday"]] != (day.weekday() + 1) % 7:
            raise ValueError(f"weekday disagrees with date on {row['dteday']}")
        out.append({
            "dteday": row["dteday"],
            "season": SEASONS[row["season"]],
            "yr": day.year - 2011,
            "mnth": day.month,
            "hr": _hour(row["hr"]),
            "holiday": YES_NO[row["holiday"]],
            "weekday": (day.weekday() + 1) % 7,
            "workingday": YES_NO[row["workingday"]],
            "weathersit": WEATHER.get(row["weathersit"]),
            # UCI normalisation: t_min=-8, t_max=39; at_min=-16, at_max=50
            "temp": _fmt((float(row["temp"]) + 8.0) / 47.0, 2),
            "atemp": _fmt((float(row["atemp"]) + 16.0) / 66.0, 4),
            "hum": _fmt(float(row["hum"]) / 100.0, 2),
            "windspeed": _fmt(float(row["windspeed"]) / 67.0, 4),
            "casual": casual,
            "registered": registered,
            "cnt": int(row["cnt"]),
        })
    out.sort(key=lambda r: (r["dteday"], r["hr"]))
    for i, r in enumerate(out, start=1):
        r["instant"] = i
    return out


def fill_from_islp(rows, islp_rows):
    """Fill 2011 weather from ISLP and cross-check shared columns."""
    by_key = {}
    for r in rows:
        if r["yr"] == 0:
            doy = date.fromisoformat(r["dteday"]).timetuple().tm_yday
            by_key[(doy, r["hr"])] = r
    matched = 0
    for s in islp_rows:
        r = by_key[(int(s["day"]), int(s["hr"]))]
        for col, other in (("temp", "temp"), ("atemp", "atemp"), ("hum", "hum"),
                           ("windspeed", "windspeed")):
            if abs(float(r[col]) - float(s[other])) > 1e-9:
                raise ValueError(f"{col} mismatch at instant {r['instant']}")
        for col, other in (("casual", "casual"), ("registered", "registered"),
                           ("cnt", "bikers"), ("holiday", "holiday"),
                           ("workingday", "workingday"), ("weekday", "weekday"),
                           ("season", "season")):
            if int(r[col]) != int(s[other]):
                raise ValueError(f"{col} mismatch at instant {r['instant']}")
        weather = ISLP_WEATHER[s["weathersit"]]
        if r["weathersit"] is not None and r["weathersit"] != weather:
            raise ValueError(f"weathersit mismatch at instant {r['instant']}")
        r["weathersit"] = weather
        matched += 1
    return matched


def impute_weather(rows):
    imputed = []
    by_day = {}
    for r in rows:
        by_day.setdefault(r["dteday"], []).append(r)
    for day_rows in by_day.values():
        known = [r for r in day_rows if r["weathersit"] is not None]
        for r in day_rows:
            if r["weathersit"] is None:
                nearest = min(known, key=lambda k: (abs(k["hr"] - r["hr"]), k["hr"]))
                r["weathersit"] = nearest["weathersit"]
                imputed.append(r["instant"])
    return imputed


def main(argv):
    if len(argv) not in (3, 4):
        print(__doc__)
        return 1
    rows = convert(read_source(argv[1]))
    if len(argv) == 4:
        n = fill_from_islp(rows, read_source(argv[3], "Bikeshare.csv"))
        print(f"cross-checked {n} rows against ISLP")
    imputed = impute_weather(rows)
    with open(argv[2] + ".imputed", "w") as fh:
        fh.write("".join(f"{i}\n" for i in imputed))
    print(f"imputed weathersit for {len(imputed)} rows")
    with open(argv[2], "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=HEADER, lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)
    print(f"wrote {len(rows)} rows to {argv[2]}")
    return 0


if __name__ == "__main__":
    sys.exit(main(sys.argv))
