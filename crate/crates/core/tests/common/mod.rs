#![allow(dead_code)]

pub mod oracle;

use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;
use turducken_core::SyntaxNode;

pub const PYTHON_SNIPPETS: &[&str] = &[
    "return 1\n",
    "x = 1\n",
    "cursor.execute(\"SELECT * FROM users\")\n",
    "rows = conn.execute('SELECT id, name FROM t WHERE age > 30').fetchall()\n",
    "def get_user(db, uid):\n    return db.execute(\"SELECT * FROM users WHERE id = ?\", (uid,)).fetchone()\n",
    "import sqlite3\nconn = sqlite3.connect('app.db')\ncur = conn.cursor()\n",
    "for row in cur.execute(\"SELECT name FROM people ORDER BY name\"):\n    print(row[0])\n",
    "total = sum(r[1] for r in rows)\n",
    "q = f\"SELECT * FROM {table} LIMIT {n}\"\n",
    "session.query(User).filter(User.age > 21).all()\n",
    "users = User.query.filter_by(active=True).order_by(User.name).limit(10).all()\n",
    "with conn:\n    conn.execute(\"DELETE FROM logs WHERE ts < ?\", (cutoff,))\n",
    "class Repo:\n    def __init__(self, conn):\n        self.conn = conn\n\n    def count(self):\n        return self.conn.execute('SELECT COUNT(*) FROM items').fetchone()[0]\n",
    "if not rows:\n    raise ValueError('empty result')\nelse:\n    print(len(rows))\n",
    "try:\n    cur.execute(sql)\nexcept Exception as e:\n    conn.rollback()\n    raise\n",
    "names = [r['name'] for r in cur.fetchall() if r['score'] >= 90]\n",
    "data = {'id': 1, 'tags': ['a', 'b']}\n",
    "cur.executemany(\"INSERT INTO t (a, b) VALUES (?, ?)\", pairs)\nconn.commit()\n",
    "lambda row: row[0] * 2\n",
    "assert cursor.rowcount == 1, 'update failed'\n",
    "result = db.session.execute(text(\"UPDATE accounts SET balance = balance - :amt WHERE id = :id\"), {'amt': 10, 'id': 3})\n",
    "async def fetch(pool):\n    async with pool.acquire() as c:\n        return await c.fetch('SELECT 1')\n",
    "while i < 10:\n    i += 1\n",
    "x, y = y, x\n",
    "print(\"\"\"SELECT a\nFROM b\"\"\")\n",
    "s = ''\n",
    "df = pd.read_sql_query(\"SELECT year, SUM(sales) AS s FROM orders GROUP BY year\", conn)\n",
    "@app.route('/users')\ndef users():\n    return jsonify(query_db('SELECT * FROM users'))\n",
    "Order.objects.filter(status='paid').values('customer').annotate(n=Count('id'))\n",
    "cur.execute(\"SELECT * FROM t WHERE name = %s\" % name)\n",
    "def f(*args, **kwargs):\n    pass\n",
    "del cache[key]\n",
    "global counter\n",
    "value = a if a > b else b\n",
    "items = sorted(rows, key=lambda r: (r[2], -r[1]))\n",
    "x = not (a and b) or c\n",
];

pub const JAVA_SNIPPETS: &[&str] = &[
    "class A { int x = 1; }",
    "class Q { void run(Statement st) throws Exception { st.executeQuery(\"SELECT * FROM users\"); } }",
    "class D { ResultSet r(Connection c) throws SQLException { PreparedStatement ps = c.prepareStatement(\"SELECT id FROM t WHERE a = ?\"); ps.setInt(1, 5); return ps.executeQuery(); } }",
    "public class Main { public static void main(String[] args) { System.out.println(\"hi\"); } }",
    "class L { int sum(int[] a) { int s = 0; for (int v : a) { s += v; } return s; } }",
    "class W { void w(int i) { while (i > 0) { i--; } } }",
    "class T { String t(boolean b) { return b ? \"yes\" : \"no\"; } }",
    "interface Repo { List<User> findAll(); }",
    "class E { void e() { try { f(); } catch (IOException ex) { throw new RuntimeException(ex); } finally { g(); } } }",
    "class J { @Query(\"SELECT u FROM User u WHERE u.age > :age\") List<User> older(int age); }",
    "class S { void s(Connection c) throws SQLException { try (Statement st = c.createStatement()) { st.executeUpdate(\"DELETE FROM logs\"); } } }",
    "enum Color { RED, GREEN, BLUE }",
    "class G<T> { T get() { return null; } }",
    "class M { Map<String, Integer> m = new HashMap<>(); }",
    "class K { void k(List<String> xs) { xs.stream().filter(s -> !s.isEmpty()).forEach(System.out::println); } }",
    "class Sw { int f(int x) { switch (x) { case 1: return 10; default: return 0; } } }",
    "class C { char c = 'x'; String e = \"\"; }",
];

pub fn real_snippets() -> Vec<(turducken_core::Grammar, &'static str)> {
    use turducken_core::Grammar;
    PYTHON_SNIPPETS
        .iter()
        .map(|s| (Grammar::Python, *s))
        .chain(JAVA_SNIPPETS.iter().map(|s| (Grammar::Java, *s)))
        .collect()
}

pub const INTERNAL_KINDS: &[&str] = &[
    "module",
    "expression_statement",
    "call",
    "argument_list",
    "assignment",
    "return_statement",
    "binary_operator",
    "if_statement",
    "block",
    "string",
    "attribute",
];

pub const LEAF_KINDS: &[&str] = &[
    "identifier",
    "integer",
    "string_content",
    "string_start",
    "(",
    ")",
    ".",
    "=",
];

pub const LEAF_VALUES: &[&str] = &[
    "x",
    "cursor",
    "execute",
    "1",
    "42",
    "(",
    ")",
    ".",
    "=",
    "\"",
    "SELECT * FROM t",
    "STR",
    "",
    "'a b'",
    "return",
    "<mod>",
];

/// Random tree shaped like a parser's output: internal nodes of at most
/// four children, a mix of string and non-string leaves, some of them empty.
pub fn random_tree<R: Rng>(rng: &mut R, depth: usize) -> SyntaxNode {
    if depth == 0 || rng.gen_bool(0.3) {
        let kind = *LEAF_KINDS.choose(rng).unwrap();
        let value = *LEAF_VALUES.choose(rng).unwrap();
        return SyntaxNode::leaf(kind, value).with_named(rng.gen_bool(0.5));
    }
    let n = rng.gen_range(1..=4);
    let children = (0..n).map(|_| random_tree(rng, depth - 1)).collect();
    SyntaxNode::internal(*INTERNAL_KINDS.choose(rng).unwrap(), children)
        .unwrap()
        .with_named(rng.gen_bool(0.8))
}

pub fn arb_tree() -> impl Strategy<Value = SyntaxNode> {
    let leaf = (
        prop::sample::select(LEAF_KINDS),
        prop::sample::select(LEAF_VALUES),
        any::<bool>(),
    )
        .prop_map(|(k, v, named)| SyntaxNode::leaf(k, v).with_named(named));
    leaf.prop_recursive(5, 64, 4, |inner| {
        (
            prop::sample::select(INTERNAL_KINDS),
            prop::collection::vec(inner, 1..=4),
        )
            .prop_map(|(k, children)| SyntaxNode::internal(k, children).unwrap())
    })
}

pub fn nonempty_leaf_values(tree: &SyntaxNode) -> Vec<String> {
    tree.leaf_values()
        .into_iter()
        .filter(|v| !v.is_empty())
        .map(str::to_string)
        .collect()
}

pub fn toks(s: &str) -> Vec<String> {
    s.split_whitespace().map(str::to_string).collect()
}
