/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_heatmap_free: (a: number, b: number) => void;
export const __wbg_normcurve_free: (a: number, b: number) => void;
export const __wbg_observability_free: (a: number, b: number) => void;
export const heatmap_cols: (a: number) => number;
export const heatmap_max: (a: number) => number;
export const heatmap_min: (a: number) => number;
export const heatmap_rows: (a: number) => number;
export const heatmap_values: (a: number) => [number, number];
export const normCurve: (a: number, b: number, c: number, d: number, e: number, f: number, g: number) => [number, number, number];
export const normcurve_norms: (a: number) => [number, number];
export const normcurve_rate: (a: number) => number;
export const normcurve_times: (a: number) => [number, number];
export const observability: (a: number, b: number, c: number, d: number, e: number) => [number, number, number];
export const observability_delta: (a: number) => number;
export const observability_g: (a: number) => [number, number];
export const observability_x: (a: number) => [number, number];
export const spacetime: (a: number, b: number, c: number, d: number, e: number, f: number) => [number, number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_malloc: (a: number, b: number) => number;
export const __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_start: () => void;
