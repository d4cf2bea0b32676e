/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_scorereport_free: (a: number, b: number) => void;
export const __wbg_spectrogram_free: (a: number, b: number) => void;
export const mask_pattern: (a: number, b: number, c: number, d: number, e: number, f: number) => [number, number, number, number];
export const score_demo: (a: number, b: number, c: number, d: number, e: number, f: number) => [number, number, number];
export const scorereport_eer: (a: number) => number;
export const scorereport_far: (a: number) => [number, number];
export const scorereport_frr: (a: number) => [number, number];
export const scorereport_genuine: (a: number) => [number, number];
export const scorereport_min_tdcf: (a: number) => number;
export const scorereport_spoof: (a: number) => [number, number];
export const scorereport_threshold: (a: number) => number;
export const spectrogram_bands: (a: number) => number;
export const spectrogram_frames: (a: number) => number;
export const spectrogram_values: (a: number) => [number, number];
export const synth_spectrogram: (a: number, b: number, c: number, d: number, e: number, f: number) => [number, number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __wbindgen_malloc: (a: number, b: number) => number;
export const __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_start: () => void;
