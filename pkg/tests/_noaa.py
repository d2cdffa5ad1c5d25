"""Independent solar zenith oracle: the NOAA solar calculator equations."""
import math


def noaa_zenith(lat, lon, year, month, day, hour, minute=0, second=0.0):
    a = (14 - month) // 12
    y = year + 4800 - a
    m = month + 12 * a - 3
    jdn = day + (153 * m + 2) // 5 + 365 * y + y // 4 - y // 100 + y // 400 - 32045
    minutes = hour * 60 + minute + second / 60.0
    jd = jdn - 0.5 + minutes / 1440.0
    jc = (jd - 2451545.0) / 36525.0
    l0 = (280.46646 + jc * (36000.76983 + jc * 0.0003032)) % 360.0
    m_anom = 357.52911 + jc * (35999.05029 - 0.0001537 * jc)
    ecc = 0.016708634 - jc * (0.000042037 + 0.0000001267 * jc)
    mr = math.radians(m_anom)
    ctr = (math.sin(mr) * (1.914602 - jc * (0.004817 + 0.000014 * jc))
           + math.sin(2 * mr) * (0.019993 - 0.000101 * jc) + math.sin(3 * mr) * 0.000289)
    omega = math.radians(125.04 - 1934.136 * jc)
    app_long = l0 + ctr - 0.00569 - 0.00478 * math.sin(omega)
    mean_obliq = 23.0 + (26.0 + (21.448 - jc * (46.815 + jc * (0.00059 - jc * 0.001813))) / 60.0) / 60.0
    obliq = mean_obliq + 0.00256 * math.cos(omega)
    decl = math.asin(math.sin(math.radians(obliq)) * math.sin(math.radians(app_long)))
    vy = math.tan(math.radians(obliq / 2.0)) ** 2
    l0r = math.radians(l0)
    eqt = 4.0 * math.degrees(
        vy * math.sin(2 * l0r) - 2 * ecc * math.sin(mr) + 4 * ecc * vy * math.sin(mr) * math.cos(2 * l0r)
        - 0.5 * vy * vy * math.sin(4 * l0r) - 1.25 * ecc * ecc * math.sin(2 * mr))
    tst = (minutes + eqt + 4.0 * lon) % 1440.0
    ha = tst / 4.0 - 180.0 if tst / 4.0 >= 0 else tst / 4.0 + 180.0
    phi = math.radians(lat)
    cz = (math.sin(phi) * math.sin(decl)
          + math.cos(phi) * math.cos(decl) * math.cos(math.radians(ha)))
    return math.degrees(math.acos(max(-1.0, min(1.0, cz))))
