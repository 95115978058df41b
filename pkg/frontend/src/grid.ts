/** Client-side mirror of the server's 3x3 labeling algebra. */

export const GRID_SIZE = 3;

export type Status =
  | "left-to-right"
  | "right-to-left"
  | "top-to-bottom"
  | "bottom-to-top";

export const STATUSES: readonly Status[] = [
  "left-to-right",
  "right-to-left",
  "top-to-bottom",
  "bottom-to-top",
];

/** Label (1..9) for a cell under the given labeling order. */
export function labelOf(status: Status, row: number, col: number): number {
  if (!Number.isInteger(row) || row < 0 || row >= GRID_SIZE) {
    throw new RangeError(`row out of range: ${row}`);
  }
  if (!Number.isInteger(col) || col < 0 || col >= GRID_SIZE) {
    throw new RangeError(`col out of range: ${col}`);
  }
  switch (status) {
    case "left-to-right":
      return 3 * row + col + 1;
    case "right-to-left":
      return 3 * row + (2 - col) + 1;
    case "top-to-bottom":
      return 3 * col + row + 1;
    case "bottom-to-top":
      return 3 * col + (2 - row) + 1;
  }
}

/** Full 3x3 label table, row-major. */
export function labelTable(status: Status): number[][] {
  const rows: number[][] = [];
  for (let row = 0; row < GRID_SIZE; row += 1) {
    const cells: number[] = [];
    for (let col = 0; col < GRID_SIZE; col += 1) {
      cells.push(labelOf(status, row, col));
    }
    rows.push(cells);
  }
  return rows;
}

/** The (row, col) cell carrying a given label under the given order. */
export function cellOf(status: Status, label: number): [number, number] {
  if (!Number.isInteger(label) || label < 1 || label > 9) {
    throw new RangeError(`label out of range: ${label}`);
  }
  for (let row = 0; row < GRID_SIZE; row += 1) {
    for (let col = 0; col < GRID_SIZE; col += 1) {
      if (labelOf(status, row, col) === label) {
        return [row, col];
      }
    }
  }
  throw new RangeError(`no cell for label ${label}`);
}

export interface ClickBox {
  x: number;
  y: number;
  rendered_w: number;
  rendered_h: number;
}

/**
 * Click coordinates relative to the clicked element's own rendered box.
 * getBoundingClientRect() keeps this correct under CSS scaling, so the
 * payload never depends on page layout.
 */
export function relativeClick(
  target: Element,
  clientX: number,
  clientY: number,
): ClickBox {
  const rect = target.getBoundingClientRect();
  return {
    x: clientX - rect.left,
    y: clientY - rect.top,
    rendered_w: rect.width,
    rendered_h: rect.height,
  };
}
