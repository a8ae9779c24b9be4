#pragma once

#include <string>

#include "cspn/circuit.hpp"

namespace cspn {

/** Model file format (UTF-8 JSON, format_version 1):
 *
 *   {"format_version":1, "num_y":int, "num_x":int, "root":id, "nodes":[...]}
 *
 * Node records:
 *   {"id":int, "kind":"leaf|product|gating", "scope":[ints],
 *    "children":[ids]?,
 *    "gate":{"kind":"constant|softmax", "params":[...]}?,
 *    "leaf":{"family":"bernoulli|gaussian|poisson|categorical",
 *            "link":"logit|identity|log|softmax",
 *            "coeffs":[...], "extra":{...}}?}
 *
 * Softmax gate params are the K x (|X|+1) coefficient matrix flattened
 * row-major; leaf coeffs likewise. "extra" carries "dispersion" for gaussian
 * and "categories" for categorical leaves. All reals are written with 17
 * significant digits, so a round trip reproduces every double bit-exactly.
 */
std::string circuit_to_json(const Circuit& circuit);
void save_circuit(const Circuit& circuit, const std::string& path);

/// Throws ParseError (with byte offset for syntax errors, node id context for
/// structural ones) on malformed input.
Circuit circuit_from_json(const std::string& text);
Circuit load_circuit(const std::string& path);

}  // namespace cspn
