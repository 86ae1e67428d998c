/**
 * Ordinary least squares on log amplitude, the same fit specification the
 * solver harness uses, so figure captions agree with summary JSON values.
 */

export interface LogFit {
  slope: number;
  intercept: number;
  nPoints: number;
  window: [number, number];
}

export function fitLogSlope(
  t: number[],
  amplitude: number[],
  window?: [number, number],
): LogFit {
  if (t.length !== amplitude.length) {
    throw new Error("time and amplitude arrays differ in length");
  }
  const [tMin, tMax] = window ?? [-Infinity, Infinity];
  const ts: number[] = [];
  const ys: number[] = [];
  for (let i = 0; i < t.length; i++) {
    if (t[i] >= tMin && t[i] <= tMax && amplitude[i] > 0) {
      ts.push(t[i]);
      ys.push(Math.log(amplitude[i]));
    }
  }
  if (ts.length < 2) {
    throw new Error("not enough positive samples inside the fit window");
  }
  const n = ts.length;
  const tBar = ts.reduce((a, b) => a + b, 0) / n;
  const yBar = ys.reduce((a, b) => a + b, 0) / n;
  let sxy = 0;
  let sxx = 0;
  for (let i = 0; i < n; i++) {
    sxy += (ts[i] - tBar) * (ys[i] - yBar);
    sxx += (ts[i] - tBar) * (ts[i] - tBar);
  }
  const slope = sxy / sxx;
  return {
    slope,
    intercept: yBar - slope * tBar,
    nPoints: n,
    window: [ts[0], ts[n - 1]],
  };
}
