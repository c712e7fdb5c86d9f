/*
 * Native flow table for the splitter hot path.
 *
 * Open-addressing hash table keyed by (src, dst, sport, dport); only TCP
 * flows are stored.  Semantics mirror the pure-Python table in splitter.py,
 * which the test-suite uses as the reference.
 */
#define PY_SSIZE_T_CLEAN
#include <Python.h>
#include <structmember.h>
#include <stdint.h>
#include <string.h>

#define EMPTY 0
#define FULL 1
#define TOMB 2

typedef struct {
    uint32_t src, dst;
    uint16_t sport, dport;
    uint8_t state;
    uint64_t count;
    int64_t last_seen;
} entry_t;

typedef struct {
    PyObject_HEAD
    long long threshold;
    long long idle_timeout_us;
    int short_mark;
    int long_mark;
    long long anomalies;
    long long evicted;
    entry_t *slots;
    Py_ssize_t cap;   /* power of two */
    Py_ssize_t size;
    Py_ssize_t tombs;
} TableObject;

static PyObject *Malformed = NULL;
static PyObject *ShortCls = NULL;
static PyObject *LongCls = NULL;
static PyTypeObject TableType;

static inline uint64_t
mix(uint32_t src, uint32_t dst, uint16_t sport, uint16_t dport)
{
    uint64_t x = ((uint64_t)src << 32) ^ dst;
    x ^= ((uint64_t)sport << 16 | dport) * 0x9E3779B97F4A7C15ULL;
    x ^= x >> 30; x *= 0xBF58476D1CE4E5B9ULL;
    x ^= x >> 27; x *= 0x94D049BB133111EBULL;
    x ^= x >> 31;
    return x;
}

static int
table_resize(TableObject *t, Py_ssize_t newcap)
{
    entry_t *old = t->slots;
    Py_ssize_t oldcap = t->cap;
    entry_t *slots = PyMem_Calloc((size_t)newcap, sizeof(entry_t));
    if (slots == NULL) {
        PyErr_NoMemory();
        return -1;
    }
    for (Py_ssize_t i = 0; i < oldcap; i++) {
        entry_t *e = &old[i];
        if (e->state != FULL)
            continue;
        size_t j = (size_t)mix(e->src, e->dst, e->sport, e->dport) & (size_t)(newcap - 1);
        while (slots[j].state == FULL)
            j = (j + 1) & (size_t)(newcap - 1);
        slots[j] = *e;
    }
    PyMem_Free(old);
    t->slots = slots;
    t->cap = newcap;
    t->tombs = 0;
    return 0;
}

static entry_t *
table_find(TableObject *t, uint32_t src, uint32_t dst, uint16_t sport, uint16_t dport)
{
    size_t mask = (size_t)(t->cap - 1);
    size_t j = (size_t)mix(src, dst, sport, dport) & mask;
    for (;;) {
        entry_t *e = &t->slots[j];
        if (e->state == EMPTY)
            return NULL;
        if (e->state == FULL && e->src == src && e->dst == dst
                && e->sport == sport && e->dport == dport)
            return e;
        j = (j + 1) & mask;
    }
}

static entry_t *
table_insert(TableObject *t, uint32_t src, uint32_t dst, uint16_t sport, uint16_t dport,
             int64_t now)
{
    if ((t->size + t->tombs + 1) * 2 > t->cap) {
        Py_ssize_t newcap = t->cap;
        while ((t->size + 1) * 4 > newcap)
            newcap *= 2;
        if (table_resize(t, newcap) < 0)
            return NULL;
    }
    size_t mask = (size_t)(t->cap - 1);
    size_t j = (size_t)mix(src, dst, sport, dport) & mask;
    while (t->slots[j].state == FULL)
        j = (j + 1) & mask;
    entry_t *e = &t->slots[j];
    if (e->state == TOMB)
        t->tombs--;
    e->state = FULL;
    e->src = src; e->dst = dst; e->sport = sport; e->dport = dport;
    e->count = 0;
    e->last_seen = now;
    t->size++;
    return e;
}

static int
Table_init(TableObject *self, PyObject *args, PyObject *kwds)
{
    static char *kwlist[] = {"threshold", "idle_timeout_us", "short_mark", "long_mark", NULL};
    long long threshold = 40, timeout = 30000000LL;
    int short_mark = 0x00, long_mark = 0x08;
    if (!PyArg_ParseTupleAndKeywords(args, kwds, "|LLii", kwlist,
                                     &threshold, &timeout, &short_mark, &long_mark))
        return -1;
    if (threshold < 1) {
        PyErr_SetString(PyExc_ValueError, "threshold must be >= 1");
        return -1;
    }
    if (short_mark < 0 || short_mark > 255 || long_mark < 0 || long_mark > 255) {
        PyErr_SetString(PyExc_ValueError, "ToS marks must fit in one byte");
        return -1;
    }
    if (short_mark == long_mark) {
        PyErr_SetString(PyExc_ValueError, "short and long marks must differ");
        return -1;
    }
    self->threshold = threshold;
    self->idle_timeout_us = timeout;
    self->short_mark = short_mark;
    self->long_mark = long_mark;
    self->anomalies = 0;
    self->evicted = 0;
    PyMem_Free(self->slots);
    self->cap = 64;
    self->size = 0;
    self->tombs = 0;
    self->slots = PyMem_Calloc(64, sizeof(entry_t));
    if (self->slots == NULL) {
        PyErr_NoMemory();
        return -1;
    }
    return 0;
}

static void
Table_dealloc(TableObject *self)
{
    PyMem_Free(self->slots);
    Py_TYPE(self)->tp_free((PyObject *)self);
}

static Py_ssize_t
Table_len(TableObject *self)
{
    return self->size;
}

static int
parse_tuple(PyObject *tup, uint32_t *src, uint32_t *dst, uint16_t *sport, uint16_t *dport,
            int *proto)
{
    unsigned long v[5];
    PyObject *seq = PySequence_Fast(tup, "expected a 5-tuple");
    if (seq == NULL)
        return -1;
    if (PySequence_Fast_GET_SIZE(seq) != 5) {
        Py_DECREF(seq);
        PyErr_SetString(PyExc_ValueError, "expected a 5-tuple");
        return -1;
    }
    for (int i = 0; i < 5; i++) {
        v[i] = PyLong_AsUnsignedLong(PySequence_Fast_GET_ITEM(seq, i));
        if (v[i] == (unsigned long)-1 && PyErr_Occurred()) {
            Py_DECREF(seq);
            return -1;
        }
    }
    Py_DECREF(seq);
    *src = (uint32_t)v[0]; *dst = (uint32_t)v[1];
    *sport = (uint16_t)v[2]; *dport = (uint16_t)v[3];
    *proto = (int)v[4];
    return 0;
}

static PyObject *
Table_lookup(TableObject *self, PyObject *tup)
{
    uint32_t src, dst; uint16_t sport, dport; int proto;
    if (parse_tuple(tup, &src, &dst, &sport, &dport, &proto) < 0)
        return NULL;
    if (proto != 6)
        Py_RETURN_NONE;
    entry_t *e = table_find(self, src, dst, sport, dport);
    if (e == NULL)
        Py_RETURN_NONE;
    return Py_BuildValue("(KL)", (unsigned long long)e->count, (long long)e->last_seen);
}

static PyObject *
Table_raw_items(TableObject *self, PyObject *Py_UNUSED(ignored))
{
    PyObject *out = PyList_New(0);
    if (out == NULL)
        return NULL;
    for (Py_ssize_t i = 0; i < self->cap; i++) {
        entry_t *e = &self->slots[i];
        if (e->state != FULL)
            continue;
        PyObject *item = Py_BuildValue("((kkii)KL)", (unsigned long)e->src, (unsigned long)e->dst,
                                       (int)e->sport, (int)e->dport,
                                       (unsigned long long)e->count, (long long)e->last_seen);
        if (item == NULL || PyList_Append(out, item) < 0) {
            Py_XDECREF(item);
            Py_DECREF(out);
            return NULL;
        }
        Py_DECREF(item);
    }
    return out;
}

static PyObject *
Table_clear(TableObject *self, PyObject *Py_UNUSED(ignored))
{
    memset(self->slots, 0, (size_t)self->cap * sizeof(entry_t));
    self->size = 0;
    self->tombs = 0;
    Py_RETURN_NONE;
}

static PyMethodDef Table_methods[] = {
    {"_lookup", (PyCFunction)Table_lookup, METH_O, "(pkt_count, last_seen) or None."},
    {"_raw_items", (PyCFunction)Table_raw_items, METH_NOARGS, "List of live entries."},
    {"clear", (PyCFunction)Table_clear, METH_NOARGS, "Drop every entry."},
    {NULL}
};

static PyMemberDef Table_members[] = {
    {"threshold", T_LONGLONG, offsetof(TableObject, threshold), READONLY, NULL},
    {"idle_timeout_us", T_LONGLONG, offsetof(TableObject, idle_timeout_us), 0, NULL},
    {"short_mark", T_INT, offsetof(TableObject, short_mark), READONLY, NULL},
    {"long_mark", T_INT, offsetof(TableObject, long_mark), READONLY, NULL},
    {"anomalies", T_LONGLONG, offsetof(TableObject, anomalies), 0, NULL},
    {"evicted", T_LONGLONG, offsetof(TableObject, evicted), 0, NULL},
    {NULL}
};

static PySequenceMethods Table_as_sequence = {
    .sq_length = (lenfunc)Table_len,
};

static PyTypeObject TableType = {
    PyVarObject_HEAD_INIT(NULL, 0)
    .tp_name = "flowsplit._csplit.FlowTable",
    .tp_basicsize = sizeof(TableObject),
    .tp_flags = Py_TPFLAGS_DEFAULT | Py_TPFLAGS_BASETYPE,
    .tp_new = PyType_GenericNew,
    .tp_init = (initproc)Table_init,
    .tp_dealloc = (destructor)Table_dealloc,
    .tp_methods = Table_methods,
    .tp_members = Table_members,
    .tp_as_sequence = &Table_as_sequence,
};

static inline uint32_t
be32(const unsigned char *p)
{
    return (uint32_t)p[0] << 24 | (uint32_t)p[1] << 16 | (uint32_t)p[2] << 8 | p[3];
}

static PyObject *
malformed(TableObject *t, const char *msg)
{
    t->anomalies++;
    PyErr_SetString(Malformed, msg);
    return NULL;
}

/* process_packet(table, header, now, src_port=0, dst_port=0) */
static PyObject *
process_packet(PyObject *module, PyObject *const *args, Py_ssize_t nargs)
{
    if (nargs < 3 || nargs > 5) {
        PyErr_SetString(PyExc_TypeError,
                        "process_packet(table, header, now, src_port=0, dst_port=0)");
        return NULL;
    }
    if (!PyObject_TypeCheck(args[0], &TableType)) {
        PyErr_SetString(PyExc_TypeError, "table must be a FlowTable");
        return NULL;
    }
    TableObject *t = (TableObject *)args[0];
    PyObject *hdr = args[1];
    if (!PyBytes_Check(hdr)) {
        PyErr_SetString(PyExc_TypeError, "header must be bytes");
        return NULL;
    }
    long long now = PyLong_AsLongLong(args[2]);
    if (now == -1 && PyErr_Occurred())
        return NULL;
    unsigned long sport = 0, dport = 0;
    if (nargs > 3) {
        sport = PyLong_AsUnsignedLong(args[3]);
        if (sport == (unsigned long)-1 && PyErr_Occurred())
            return NULL;
    }
    if (nargs > 4) {
        dport = PyLong_AsUnsignedLong(args[4]);
        if (dport == (unsigned long)-1 && PyErr_Occurred())
            return NULL;
    }

    const unsigned char *h = (const unsigned char *)PyBytes_AS_STRING(hdr);
    if (PyBytes_GET_SIZE(hdr) != 20 || h[0] != 0x45)
        return malformed(t, "not a valid 20-byte IPv4 header");
    uint32_t sum = 0;
    for (int i = 0; i < 20; i += 2)
        sum += (uint32_t)h[i] << 8 | h[i + 1];
    while (sum >> 16)
        sum = (sum & 0xFFFF) + (sum >> 16);
    if (sum != 0xFFFF)
        return malformed(t, "not a valid 20-byte IPv4 header");

    if (h[9] != 6)
        return PyTuple_Pack(2, ShortCls, hdr);

    uint32_t src = be32(h + 12), dst = be32(h + 16);
    entry_t *e = table_find(t, src, dst, (uint16_t)sport, (uint16_t)dport);
    if (e == NULL) {
        e = table_insert(t, src, dst, (uint16_t)sport, (uint16_t)dport, now);
        if (e == NULL)
            return NULL;
    }
    e->count++;
    e->last_seen = now;
    int is_long = e->count >= (uint64_t)t->threshold;
    PyObject *cls = is_long ? LongCls : ShortCls;
    int mark = is_long ? t->long_mark : t->short_mark;
    if (h[1] == mark)
        return PyTuple_Pack(2, cls, hdr);

    /* HC' = ~(~HC + ~m + m'), RFC 1624 eq. 3 */
    uint32_t hc = (uint32_t)h[10] << 8 | h[11];
    uint32_t m_old = (uint32_t)h[0] << 8 | h[1];
    uint32_t m_new = (uint32_t)h[0] << 8 | (uint32_t)mark;
    uint32_t s = (~hc & 0xFFFF) + (~m_old & 0xFFFF) + m_new;
    s = (s & 0xFFFF) + (s >> 16);
    s = (s & 0xFFFF) + (s >> 16);
    uint16_t hc_new = (uint16_t)(~s & 0xFFFF);

    PyObject *out = PyBytes_FromStringAndSize((const char *)h, 20);
    if (out == NULL)
        return NULL;
    unsigned char *o = (unsigned char *)PyBytes_AS_STRING(out);
    o[1] = (unsigned char)mark;
    o[10] = (unsigned char)(hc_new >> 8);
    o[11] = (unsigned char)(hc_new & 0xFF);
    PyObject *res = PyTuple_Pack(2, cls, out);
    Py_DECREF(out);
    return res;
}

static PyObject *
evict_idle(PyObject *module, PyObject *args)
{
    PyObject *obj;
    long long now;
    if (!PyArg_ParseTuple(args, "OL", &obj, &now))
        return NULL;
    if (!PyObject_TypeCheck(obj, &TableType)) {
        PyErr_SetString(PyExc_TypeError, "table must be a FlowTable");
        return NULL;
    }
    TableObject *t = (TableObject *)obj;
    long long limit = now - t->idle_timeout_us;
    Py_ssize_t removed = 0;
    for (Py_ssize_t i = 0; i < t->cap; i++) {
        entry_t *e = &t->slots[i];
        if (e->state == FULL && e->last_seen < limit) {
            e->state = TOMB;
            removed++;
        }
    }
    t->size -= removed;
    t->tombs += removed;
    t->evicted += removed;
    if (t->size == 0 && t->tombs) {
        memset(t->slots, 0, (size_t)t->cap * sizeof(entry_t));
        t->tombs = 0;
    }
    return PyLong_FromSsize_t(removed);
}

static PyObject *
classify_only(PyObject *module, PyObject *args)
{
    PyObject *obj, *tup;
    if (!PyArg_ParseTuple(args, "OO", &obj, &tup))
        return NULL;
    if (!PyObject_TypeCheck(obj, &TableType)) {
        PyErr_SetString(PyExc_TypeError, "table must be a FlowTable");
        return NULL;
    }
    TableObject *t = (TableObject *)obj;
    uint32_t src, dst; uint16_t sport, dport; int proto;
    if (parse_tuple(tup, &src, &dst, &sport, &dport, &proto) < 0)
        return NULL;
    PyObject *cls = ShortCls;
    if (proto == 6) {
        entry_t *e = table_find(t, src, dst, sport, dport);
        if (e != NULL && e->count >= (uint64_t)t->threshold)
            cls = LongCls;
    }
    Py_INCREF(cls);
    return cls;
}

static PyObject *
bind(PyObject *module, PyObject *args)
{
    PyObject *exc, *s, *l;
    if (!PyArg_ParseTuple(args, "OOO", &exc, &s, &l))
        return NULL;
    Py_INCREF(exc); Py_INCREF(s); Py_INCREF(l);
    Py_XSETREF(Malformed, exc);
    Py_XSETREF(ShortCls, s);
    Py_XSETREF(LongCls, l);
    Py_RETURN_NONE;
}

static PyMethodDef module_methods[] = {
    {"process_packet", (PyCFunction)(void (*)(void))process_packet, METH_FASTCALL,
     "process_packet(table, header, now, src_port=0, dst_port=0) -> (FlowClass, bytes)"},
    {"evict_idle", evict_idle, METH_VARARGS, "evict_idle(table, now) -> int"},
    {"classify_only", classify_only, METH_VARARGS, "classify_only(table, five_tuple)"},
    {"bind", bind, METH_VARARGS, "bind(MalformedHeader, SHORT, LONG)"},
    {NULL}
};

static struct PyModuleDef moduledef = {
    PyModuleDef_HEAD_INIT, "_csplit", NULL, -1, module_methods,
};

PyMODINIT_FUNC
PyInit__csplit(void)
{
    if (PyType_Ready(&TableType) < 0)
        return NULL;
    PyObject *m = PyModule_Create(&moduledef);
    if (m == NULL)
        return NULL;
    Py_INCREF(&TableType);
    if (PyModule_AddObject(m, "FlowTable", (PyObject *)&TableType) < 0) {
        Py_DECREF(&TableType);
        Py_DECREF(m);
        return NULL;
    }
    Malformed = PyExc_ValueError;
    Py_INCREF(Malformed);
    ShortCls = PyLong_FromLong(0);
    LongCls = PyLong_FromLong(1);
    return m;
}
