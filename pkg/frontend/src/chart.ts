/** Minimal SVG line chart for objective traces; pure string builders so
 * the rendering is unit-testable without a browser. */

export type Series = { label: string; values: number[] };

export function polylinePoints(
  values: number[],
  width: number,
  height: number,
  pad = 4,
): string {
  if (values.length === 0) return '';
  const lo = Math.min(...values);
  const hi = Math.max(...values);
  const span = hi - lo || 1;
  const innerW = width - 2 * pad;
  const innerH = height - 2 * pad;
  const step = values.length > 1 ? innerW / (values.length - 1) : 0;
  return values
    .map((v, i) => {
      const x = pad + i * step;
      const y = pad + innerH * (1 - (v - lo) / span);
      return `${x.toFixed(1)},${y.toFixed(1)}`;
    })
    .join(' ');
}

export function traceChartSvg(
  series: Series[],
  width = 420,
  height = 140,
): string {
  const colors = ['#2563eb', '#dc2626', '#059669', '#d97706', '#7c3aed', '#0891b2'];
  const lines = series
    .filter((s) => s.values.length > 0)
    .map((s, i) => {
      const color = colors[i % colors.length];
      return `<polyline fill="none" stroke="${color}" stroke-width="1.5" ` +
        `points="${polylinePoints(s.values, width, height)}"><title>${s.label}</title></polyline>`;
    })
    .join('');
  return `<svg viewBox="0 0 ${width} ${height}" width="${width}" height="${height}" ` +
    `role="img" aria-label="objective trace">` +
    `<rect x="0" y="0" width="${width}" height="${height}" fill="#f8fafc"/>${lines}</svg>`;
}
