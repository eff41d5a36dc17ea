"""Heuristic Verilog text scanning.

This is deliberately not a parser. It lexes just enough to find module
declarations, their header (everything through the first `;`), and
instantiation statements, while never being fooled by comments or string
literals. Generate blocks, macros and expressions are out of scope; the
instantiation scan is restricted to module names we already know are
declared, which filters out primitives, tasks and library cells.
"""

from __future__ import annotations

import re

IDENT = r"[A-Za-z_][A-Za-z0-9_$]*"

_MODULE_RE = re.compile(r"\bmodule\s+(" + IDENT + r")", re.MULTILINE)
_ENDMODULE_RE = re.compile(r"\bendmodule\b")


def blank_comments_and_strings(text: str) -> str:
    """Replace comment and string-literal bytes with spaces, keeping every
    other byte at its original offset (newlines inside comments survive so
    line numbers stay meaningful)."""
    out = list(text)
    i = 0
    n = len(text)
    while i < n:
        c = text[i]
        if c == "/" and i + 1 < n and text[i + 1] == "/":
            j = text.find("\n", i)
            j = n if j == -1 else j
            for k in range(i, j):
                out[k] = " "
            i = j
        elif c == "/" and i + 1 < n and text[i + 1] == "*":
            j = text.find("*/", i + 2)
            j = n if j == -1 else j + 2
            for k in range(i, j):
                if out[k] != "\n":
                    out[k] = " "
            i = j
        elif c == '"':
            j = i + 1
            while j < n:
                if text[j] == "\\":
                    j += 2
                    continue
                if text[j] == '"' or text[j] == "\n":
                    j += 1
                    break
                j += 1
            for k in range(i, min(j, n)):
                if out[k] != "\n":
                    out[k] = " "
            i = j
        else:
            i += 1
    return "".join(out)


def module_names(text: str) -> list[str]:
    """Names of all modules declared in `text`, in order of appearance."""
    clean = blank_comments_and_strings(text)
    return [m.group(1) for m in _MODULE_RE.finditer(clean)]


def scan_modules(texts: list[str]) -> dict[str, str]:
    """Map module name -> body text across all sources, declaration order.

    The body runs from the `module` keyword to its matching `endmodule`
    (or end of file when unterminated). On duplicate names the first
    declaration wins.
    """
    decls: dict[str, str] = {}
    for text in texts:
        clean = blank_comments_and_strings(text)
        for m in _MODULE_RE.finditer(clean):
            end = _ENDMODULE_RE.search(clean, m.end())
            stop = end.end() if end else len(clean)
            decls.setdefault(m.group(1), clean[m.start():stop])
    return decls


def module_header(text: str, name: str) -> str | None:
    """The declaration header of module `name`: from the `module` keyword
    through the first `;`, or None if the module is not declared."""
    clean = blank_comments_and_strings(text)
    for m in _MODULE_RE.finditer(clean):
        if m.group(1) != name:
            continue
        semi = clean.find(";", m.end())
        if semi == -1:
            return clean[m.start():]
        return clean[m.start():semi + 1]
    return None


def normalize_header(header: str) -> str:
    """Whitespace-insensitive form of a module header, for equality checks.

    Collapses runs of whitespace and drops spaces next to punctuation, so
    pure reformatting never reads as an interface change.
    """
    collapsed = " ".join(header.split())
    return re.sub(r"\s*([(),;:#\[\]])\s*", r"\1", collapsed)


def headers_equivalent(text_a: str, text_b: str, name: str) -> bool:
    """True when module `name` declares the same header (up to whitespace)
    in both texts."""
    a = module_header(text_a, name)
    b = module_header(text_b, name)
    if a is None or b is None:
        return False
    return normalize_header(a) == normalize_header(b)


_KEYWORDS = {
    "module", "endmodule", "input", "output", "inout", "wire", "reg", "logic",
    "assign", "always", "always_ff", "always_comb", "always_latch", "initial",
    "begin", "end", "if", "else", "case", "casez", "casex", "endcase", "for",
    "while", "repeat", "forever", "generate", "endgenerate", "genvar",
    "parameter", "localparam", "integer", "real", "time", "function",
    "endfunction", "task", "endtask", "posedge", "negedge", "or", "and",
    "not", "signed", "unsigned", "default",
}


def _skip_balanced(text: str, i: int, open_ch: str, close_ch: str) -> int:
    """Given text[i] == open_ch, return the index just past the matching
    close_ch (len(text) when unbalanced)."""
    depth = 0
    n = len(text)
    while i < n:
        c = text[i]
        if c == open_ch:
            depth += 1
        elif c == close_ch:
            depth -= 1
            if depth == 0:
                return i + 1
        i += 1
    return n


def instantiations(body: str, known_modules: list[str]) -> list[tuple[str, str]]:
    """(module, instance) pairs instantiated inside a module body.

    Matches `<known> [#(...)] <inst> (...)[, <inst2> (...)]* ;` only for
    module names in `known_modules`, so wires named like keywords or cell
    libraries never produce edges. The body is assumed comment-free (as
    produced by scan_modules).
    """
    known = set(known_modules)
    results: list[tuple[str, str]] = []
    ident_re = re.compile(IDENT)
    i = 0
    n = len(body)
    while i < n:
        m = ident_re.search(body, i)
        if not m:
            break
        word = m.group(0)
        i = m.end()
        if word not in known or word in _KEYWORDS:
            continue
        j = _skip_ws(body, i)
        if j < n and body[j] == "#":
            j = _skip_ws(body, j + 1)
            if j < n and body[j] == "(":
                j = _skip_balanced(body, j, "(", ")")
            else:
                continue
            j = _skip_ws(body, j)
        # one or more comma-separated `<inst> ( ... )` items
        found_any = False
        while True:
            im = ident_re.match(body, j)
            if not im or im.group(0) in _KEYWORDS:
                break
            inst = im.group(0)
            k = _skip_ws(body, im.end())
            # optional instance array range: u[3:0] ( ... )
            if k < n and body[k] == "[":
                k = _skip_balanced(body, k, "[", "]")
                k = _skip_ws(body, k)
            if k >= n or body[k] != "(":
                break
            k = _skip_balanced(body, k, "(", ")")
            results.append((word, inst))
            found_any = True
            k = _skip_ws(body, k)
            if k < n and body[k] == ",":
                j = _skip_ws(body, k + 1)
                continue
            if k < n and body[k] == ";":
                k += 1
            j = k
            break
        if found_any:
            i = j
    return results


def _skip_ws(text: str, i: int) -> int:
    n = len(text)
    while i < n and text[i] in " \t\r\n":
        i += 1
    return i
