import { writeFileSync } from 'node:fs'
import { RgbImage } from './backend.js'

/**
 * Write a binary PPM (P6). Dependency-free and lossless; any image tool
 * converts it, and the file is only a visual by-product of extraction.
 */
export function writePpm(image: RgbImage, file: string): void {
  const header = Buffer.from(`P6\n${image.width} ${image.height}\n255\n`, 'ascii')
  writeFileSync(file, Buffer.concat([header, Buffer.from(image.pixels)]))
}
