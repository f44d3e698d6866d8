/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const box_halfwidth: (a: number, b: number) => number;
export const iterate_density: (a: number, b: number, c: number, d: number, e: number, f: number) => [number, number, number, number];
export const max_time: (a: number, b: number) => [number, number, number];
export const spectrum_sweep: (a: number, b: number, c: number, d: number, e: number, f: number) => [number, number, number, number];
export const trajectory: (a: number, b: number, c: number, d: number, e: number, f: number) => [number, number, number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_malloc: (a: number, b: number) => number;
export const __wbindgen_start: () => void;
