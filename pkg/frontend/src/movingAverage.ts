/**
 * Centered moving average with full-size windows, shifted at the edges.
 *
 * Every output averages exactly `window` consecutive samples; near the
 * boundaries the window slides inward instead of shrinking, so out[i] is
 * mean(series.slice(lo, lo + window)) with lo = clamp(i - floor(window/2)).
 * Matches the definition the training-side conflict-report uses.
 */
export function movingAverage(series: readonly number[], window: number): number[] {
  if (window < 1) {
    throw new Error(`moving average window must be >= 1, got ${window}`);
  }
  if (window > series.length) {
    throw new Error(`moving average window ${window} exceeds series length ${series.length}`);
  }
  const half = Math.floor(window / 2);
  const out: number[] = [];
  for (let i = 0; i < series.length; i++) {
    const lo = Math.max(0, Math.min(i - half, series.length - window));
    let sum = 0;
    for (let j = lo; j < lo + window; j++) {
      sum += series[j];
    }
    out.push(sum / window);
  }
  return out;
}
